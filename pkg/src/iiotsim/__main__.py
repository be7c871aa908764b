import sys

from iiotsim.scenario.cli import main

sys.exit(main())
