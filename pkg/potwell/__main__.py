import sys

from potwell.harness import main

if __name__ == '__main__':
    sys.exit(main())
