"""Workflows behind the command-line subcommands, plus the synthetic scenes they run on."""
