import json
import logging
import os
import random
import shutil
import string
from concurrent.futures import ThreadPoolExecutor


def ensure_dir(directory):
    """Create directory if it does not exist."""
    if not os.path.exists(directory):
        os.makedirs(directory)


def rand_temp_folder_generator(parent):
    """Create and return a hidden folder with a random suffix inside parent, e.g. parent/.potwell_X1B2C3."""
    chars = string.ascii_uppercase + string.digits
    size = 6
    random_suffix = ''.join(random.choice(chars) for _ in range(size))
    path = os.path.join(parent, '.potwell_' + random_suffix)
    ensure_dir(path)
    return path


def setup_logging(verbose=False):
    """Configure the root logger; INFO when verbose, WARNING otherwise."""
    level = logging.INFO if verbose else logging.WARNING
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    logging.getLogger().setLevel(level)


def call_parallel(function, tasks, n_jobs=1):
    """Apply function to every task and return the results in task order.

    Args:
        function: Callable taking one task.
        tasks: Sequence of task arguments.
        n_jobs: Number of worker threads. 1 runs the tasks sequentially.

    Returns:
        A list with one result per task, in the order of tasks.
    """
    tasks = list(tasks)
    if n_jobs is None or n_jobs <= 1 or len(tasks) <= 1:
        return [function(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=n_jobs) as executor:
        return list(executor.map(function, tasks))


def dump_json(obj):
    """Serialize obj to a deterministic JSON string."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + '\n'


class ArtifactWriter:
    """Stage output files and move them into place only on success.

    Files are written into a hidden staging folder inside the output directory
    and renamed into the output directory when the `with` block exits cleanly.
    On an exception the staging folder is removed and nothing is published.

    Attributes:
        out_dir: The (existing) output directory.
        stage_dir: The staging folder, or None outside the `with` block.
    """

    def __init__(self, out_dir):
        if out_dir is None or not os.path.isdir(out_dir):
            raise ValueError('output directory does not exist: {}'.format(out_dir))
        self.out_dir = out_dir
        self.stage_dir = None
        self.names = []

    def __enter__(self):
        self.stage_dir = rand_temp_folder_generator(self.out_dir)
        return self

    def path(self, name):
        """Return the staging path for name, creating parent folders."""
        if name not in self.names:
            self.names.append(name)
        full_path = os.path.join(self.stage_dir, name)
        ensure_dir(os.path.dirname(full_path))
        return full_path

    def write_text(self, name, text):
        with open(self.path(name), 'w', newline='\n') as fd:
            fd.write(text)

    def write_bytes(self, name, data):
        with open(self.path(name), 'wb') as fd:
            fd.write(data)

    def __exit__(self, exc_type, exc_value, traceback):
        try:
            if exc_type is None:
                for name in self.names:
                    target = os.path.join(self.out_dir, name)
                    ensure_dir(os.path.dirname(target))
                    os.replace(os.path.join(self.stage_dir, name), target)
        finally:
            shutil.rmtree(self.stage_dir, ignore_errors=True)
            self.stage_dir = None
        return False
