import sys

from dpfmix.cli import main

sys.exit(main())
