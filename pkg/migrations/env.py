"""Alembic environment for the prediction log (prediction_records)."""
import os
from logging.config import fileConfig

from alembic import context
from sqlalchemy import engine_from_config, pool

config = context.config

if config.config_file_name is not None:
    fileConfig(config.config_file_name)

# ── Metadata ─────────────────────────────────────────────────────────────────
from database import safe_db_url  # noqa: E402
from models import db  # noqa: E402

target_metadata = db.metadata

# ── Database URL ──────────────────────────────────────────────────────────────
# DATABASE_URL wins over alembic.ini so credentials never live in the repo.
DB_URL = safe_db_url(os.getenv('DATABASE_URL', 'sqlite:///turnaround.db'))
config.set_main_option('sqlalchemy.url', DB_URL)

# SQLite cannot ALTER most columns in place; batch mode rebuilds the table.
RENDER_AS_BATCH = DB_URL.startswith('sqlite')


def run_migrations_offline() -> None:
    """Emit the migration SQL without connecting."""
    context.configure(
        url=DB_URL,
        target_metadata=target_metadata,
        literal_binds=True,
        dialect_opts={'paramstyle': 'named'},
        render_as_batch=RENDER_AS_BATCH,
    )
    with context.begin_transaction():
        context.run_migrations()


def run_migrations_online() -> None:
    connectable = engine_from_config(
        config.get_section(config.config_ini_section, {}),
        prefix='sqlalchemy.',
        poolclass=pool.NullPool,
    )
    with connectable.connect() as connection:
        context.configure(
            connection=connection,
            target_metadata=target_metadata,
            compare_type=True,
            render_as_batch=RENDER_AS_BATCH,
        )
        with context.begin_transaction():
            context.run_migrations()


if context.is_offline_mode():
    run_migrations_offline()
else:
    run_migrations_online()
