"""Allow `python -m replaylab` invocation."""

from replaylab.cli import main

main()
