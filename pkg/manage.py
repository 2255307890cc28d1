"""CLI entrypoint.

Loads environment variables from .env, then runs the solver command group.

Usage examples:
    python manage.py solve --preset example2 --h 0.0625 --out runs/ex2
    python manage.py solve --preset example1 --n 16 --k 2 --m 2
    python manage.py converge --preset example1 --k 1 --m 1 --meshes 8,16,32
    python manage.py check
    PNP_CONFIG=production python manage.py solve --config runs/ex2/config.yaml
"""

import os

from dotenv import load_dotenv

from app.cli import cli


# ----------------------------------------------------------------------
# Bootstrap: load environment (.env.prod first, .env as fallback)
# ----------------------------------------------------------------------
if os.path.exists(".env.prod"):
    load_dotenv(".env.prod")
elif os.path.exists(".env"):
    load_dotenv(".env")


if __name__ == "__main__":
    cli()
