import sys

from vecgarch.cli import main

sys.exit(main())
