import sys

from qbattery.cli import main

sys.exit(main())
