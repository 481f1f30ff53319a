from .interface import run_cli
