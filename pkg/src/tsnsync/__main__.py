import sys

from tsnsync.cli import main

sys.exit(main())
