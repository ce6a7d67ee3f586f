import sys

from vnsim.cli import main

sys.exit(main())
