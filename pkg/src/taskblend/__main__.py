from taskblend.cli import main
import sys
sys.exit(main())
