from logging.config import fileConfig

from sqlalchemy import engine_from_config, pool

from alembic import context

# project root comes from prepend_sys_path in alembic.ini
from app.config import settings
from models import Base

config = context.config
config.set_main_option("sqlalchemy.url", settings.database_url)

if config.config_file_name is not None:
    fileConfig(config.config_file_name)

target_metadata = Base.metadata

# sqlite cannot ALTER most things in place
AS_BATCH = settings.database_url.startswith("sqlite")

CONFIGURE_OPTS = dict(
    target_metadata=target_metadata,
    compare_type=True,
    render_as_batch=AS_BATCH,
    # the registry holds only experiment_runs; leave foreign tables alone
    include_name=lambda name, type_, parent: type_ != "table" or name in target_metadata.tables,
)


def run_migrations_offline() -> None:
    context.configure(
        url=settings.database_url,
        literal_binds=True,
        dialect_opts={"paramstyle": "named"},
        **CONFIGURE_OPTS,
    )
    with context.begin_transaction():
        context.run_migrations()


def run_migrations_online() -> None:
    section = config.get_section(config.config_ini_section, {})
    connectable = engine_from_config(section, prefix="sqlalchemy.", poolclass=pool.NullPool)
    with connectable.connect() as connection:
        context.configure(connection=connection, **CONFIGURE_OPTS)
        with context.begin_transaction():
            context.run_migrations()


if context.is_offline_mode():
    run_migrations_offline()
else:
    run_migrations_online()
