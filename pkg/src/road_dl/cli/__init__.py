"""Command-line entry point of the ``road`` executable."""
