import sys

from ridgesparse.cli import main

sys.exit(main())
