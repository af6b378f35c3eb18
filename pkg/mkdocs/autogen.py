import ast
import os
import re

SECTIONS = ('Args', 'Attributes', 'Returns', 'Raises')
PACKAGE_DIR = '../potwell'
OUTPUT_DIR = 'docs/temp/'


def dedent_block(lines):
    """Strip the common indentation of a docstring section body."""
    lines = [line for line in lines if line.strip()]
    if not lines:
        return None
    indent = min(len(line) - len(line.lstrip(' ')) for line in lines)
    return '\n'.join(line[indent:] for line in lines)


def split_entries(block):
    """Turn 'name: description' entries with indented continuations into a dict."""
    if block is None:
        return None
    entries = []
    for line in block.split('\n'):
        if line.startswith(' ') and entries:
            entries[-1] += ' ' + line.strip()
        else:
            entries.append(line.strip())
    described = {}
    for entry in entries:
        if ':' in entry:
            name, description = entry.split(':', 1)
            described[name] = description.strip()
    return described


def parse_docstring(comment):
    """Split a Google-style docstring into its descriptions and sections."""
    if not comment:
        return {}
    parts = comment.split('\n')
    sections = {name: None for name in SECTIONS}
    starts = [i for i, line in enumerate(parts) if line.strip().rstrip(':') in SECTIONS]
    body_end = starts[0] if starts else len(parts)
    body = '\n'.join(parts[:body_end]).strip()
    short, _, long = body.partition('\n\n')
    for position, start in enumerate(starts):
        stop = starts[position + 1] if position + 1 < len(starts) else len(parts)
        name = parts[start].strip().rstrip(':')
        block = dedent_block(parts[start + 1:stop])
        if name in ('Args', 'Attributes'):
            sections[name] = split_entries(block)
        elif block is not None:
            sections[name] = ' '.join(block.split('\n'))
    sections['short_description'] = re.sub(r'\s*\n\s*', ' ', short)
    sections['long_description'] = re.sub(r'\s*\n\s*', ' ', long.strip())
    return sections


def to_md(sections):
    doc = ''
    if sections.get('short_description'):
        doc += sections['short_description'] + '\n\n'
    if sections.get('long_description'):
        doc += sections['long_description'] + '\n\n'
    for name in ('Args', 'Attributes'):
        if sections.get(name):
            doc += '#####' + name + '\n'
            for arg, description in sections[name].items():
                doc += '* **' + arg + '**: ' + description + '\n\n'
    for name in ('Returns', 'Raises'):
        if sections.get(name):
            doc += '#####' + name + '\n' + sections[name] + '\n\n'
    return doc


def function_docs(definitions):
    doc = ''
    for definition in definitions:
        if definition.name.startswith('_'):
            continue
        text = to_md(parse_docstring(ast.get_docstring(definition)))
        if text:
            doc += '###' + definition.name + '\n' + text
    return doc


def module_docs(file_name):
    with open(file_name) as fd:
        module = ast.parse(fd.read())
    doc = to_md(parse_docstring(ast.get_docstring(module)))
    doc += function_docs([node for node in module.body if isinstance(node, ast.FunctionDef)])
    for class_def in [node for node in module.body if isinstance(node, ast.ClassDef)]:
        text = to_md(parse_docstring(ast.get_docstring(class_def)))
        text += function_docs([node for node in class_def.body if isinstance(node, ast.FunctionDef)])
        if text:
            doc += '##' + class_def.name + '\n' + text
    return doc


def extract_comments(directory):
    for file_name in sorted(os.listdir(directory)):
        if file_name.endswith('.py') and not file_name.startswith('__'):
            with open(os.path.join(OUTPUT_DIR, file_name[:-3] + '.md'), 'w') as output_file:
                output_file.write(module_docs(os.path.join(directory, file_name)))


if __name__ == '__main__':
    extract_comments(PACKAGE_DIR)
