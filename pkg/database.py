"""
database.py — SQLAlchemy engine and session management for the prediction log.

Provides:
  engine       — the shared SQLAlchemy engine
  SessionLocal — sessionmaker bound to the engine
  get_db()     — FastAPI dependency that yields a scoped session per request
  init_db()    — create missing tables (alembic owns real schema changes)

All SQLAlchemy calls remain synchronous. Use starlette.concurrency.run_in_threadpool
to call blocking DB operations from async route handlers without blocking the
event loop.
"""

import os
import logging
from typing import Generator

from dotenv import load_dotenv
from sqlalchemy import create_engine, event, text
from sqlalchemy.orm import sessionmaker, Session

load_dotenv()

logger = logging.getLogger(__name__)

# ── Database URL ──────────────────────────────────────────────────────────────
_raw_db_url = os.getenv('DATABASE_URL', 'sqlite:///turnaround.db')


def safe_db_url(url: str) -> str:
    """
    Ensure PostgreSQL URLs use the psycopg2 dialect prefix.
    Some hosts inject postgres:// instead of postgresql://.
    """
    if url.startswith('postgres://'):
        url = 'postgresql://' + url[len('postgres://'):]
    return url


_db_url = safe_db_url(_raw_db_url)

# ── Engine ────────────────────────────────────────────────────────────────────
_connect_args: dict = {}
if _db_url.startswith('sqlite'):
    _connect_args = {'timeout': 15, 'check_same_thread': False}

engine = create_engine(
    _db_url,
    connect_args=_connect_args,
    pool_pre_ping=True,
)

# ── SQLite WAL mode ───────────────────────────────────────────────────────────
# WAL allows concurrent readers + one writer (several gunicorn workers log
# predictions into the same file).  No-op for PostgreSQL.
if _db_url.startswith('sqlite'):
    @event.listens_for(engine, 'connect')
    def _set_sqlite_wal(dbapi_conn, _connection_record):
        cursor = dbapi_conn.cursor()
        cursor.execute('PRAGMA journal_mode=WAL')
        cursor.close()

# ── Session factory ───────────────────────────────────────────────────────────
SessionLocal = sessionmaker(
    bind=engine,
    autocommit=False,
    autoflush=False,
    expire_on_commit=False,   # records are read after commit, outside the session
)


def init_db() -> None:
    from models import db
    db.metadata.create_all(bind=engine)
    with engine.connect() as conn:
        conn.execute(text('SELECT 1'))
    logger.info("Prediction log ready at %s", _db_url.split('@')[-1])


# ── FastAPI dependency ────────────────────────────────────────────────────────

def get_db() -> Generator[Session, None, None]:
    """Yield a SQLAlchemy session for the duration of a request, then close it."""
    session = SessionLocal()
    try:
        yield session
    finally:
        session.close()
