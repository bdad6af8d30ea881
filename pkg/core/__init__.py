# Core package for settings, logging and exceptions
