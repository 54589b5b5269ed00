"""
wsgi.py — entry point for gunicorn.

    gunicorn wsgi:app -k uvicorn.workers.UvicornWorker -w 4

Several workers share one prediction log (DATABASE_URL) and, with REDIS_URL
set, one model generation key so /model/reload reaches all of them.
"""

from app import app  # noqa: F401
