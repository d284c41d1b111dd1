import sys

from chernsim.cli import main

sys.exit(main())
