import sys

from ustat.cli import main

sys.exit(main())
