"""User Interface Layer - the ``sih`` command line."""
