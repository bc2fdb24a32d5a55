import sys

from roargraph.cli import main

sys.exit(main())
