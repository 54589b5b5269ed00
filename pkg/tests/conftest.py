"""
tests/conftest.py — Shared pytest fixtures for the turnaround test suite.

Database strategy
-----------------
StaticPool (shared in-memory SQLite) → all sessions share one underlying
connection so a prediction logged by the /predict route is immediately
visible to the test's own session.  A *session-scoped* fixture creates tables
once at test-session start and drops them on exit; each test that touches
the log starts from an empty prediction_records table.

Model strategy
--------------
demo_dataset   — seeded synthetic dataset (small, 11 years) built once
trained_model  — small GBDT trained on it, saved to a temp .gbtm file
constant_model — single-value dataset (53 h turnaround) → a model that always
                 predicts 53.0; used for exact service assertions
client         — AsyncClient over the app with get_db overridden and a fresh
                 SnapshotStore (ASGITransport does not run the FastAPI lifespan)
"""
from datetime import datetime, timedelta, timezone

import pytest
import pytest_asyncio
from httpx import ASGITransport, AsyncClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

import app as app_module
from app import app
from database import get_db
from features import HolidayCalendar, assemble_matrix
from gbdt import save_model, train
from models import PredictionRecord
from models import db as Base
from portcalls import CargoOperation, Dataset, PortCall
from schemas import TrainConfig
from snapshot import SnapshotStore
from synthetic import demo_spec, synthesize_dataset

# ---------------------------------------------------------------------------
# Builders shared by the test modules
# ---------------------------------------------------------------------------

T0 = datetime(2015, 3, 2, 8, 0, tzinfo=timezone.utc)   # a Monday


def op(cargo_type="WHEAT", tonnage=1000.0, berth="QUAI-1", fiscal=None):
    return CargoOperation(cargo_type=cargo_type, fiscal_cargo_type=fiscal,
                          tonnage=tonnage, berth=berth)


def make_call(call_id="C1", hours=24.0, arrival=T0, unload="default", load=None,
              vessel_id="IMO9000001", departure="auto"):
    """PortCall with `hours` turnaround; pass departure=None for an open call."""
    if unload == "default":
        unload = op()
    if departure == "auto":
        departure = arrival + timedelta(hours=hours) if arrival is not None else None
    return PortCall(call_id=call_id, vessel_id=vessel_id, arrival=arrival,
                    departure=departure, unload=unload, load=load)


def make_dataset(calls) -> Dataset:
    return Dataset(calls=tuple(calls), source="test")


SMALL_TRAIN = TrainConfig(n_trees=30, learning_rate=0.3, max_depth=3,
                          min_samples_leaf=3, l2_leaf_reg=1.0, seed=0)


# ---------------------------------------------------------------------------
# Synthetic data and models (built once per session)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def demo_dataset():
    return synthesize_dataset(demo_spec(calls_per_year=40), seed=0)


@pytest.fixture(scope="session")
def demo_matrix(demo_dataset):
    return assemble_matrix(demo_dataset, HolidayCalendar())


@pytest.fixture(scope="session")
def trained_model(demo_matrix):
    return train(demo_matrix, SMALL_TRAIN)


@pytest.fixture(scope="session")
def model_file(tmp_path_factory, trained_model):
    path = tmp_path_factory.mktemp("models") / "demo.gbtm"
    save_model(trained_model, path)
    return path


@pytest.fixture(scope="session")
def constant_model_file(tmp_path_factory):
    """Every training call lasts 53 h, so the model predicts 53.0 everywhere."""
    calls = [
        make_call(f"K{i:03d}", hours=53.0, arrival=T0 + timedelta(days=3 * i),
                  unload=op("WHEAT" if i % 2 else "BUTADIENE", 1000.0 + 100 * i))
        for i in range(30)
    ]
    matrix = assemble_matrix(make_dataset(calls), HolidayCalendar())
    path = tmp_path_factory.mktemp("models") / "constant.gbtm"
    save_model(train(matrix, TrainConfig(n_trees=5, seed=0)), path)
    return path


# ---------------------------------------------------------------------------
# In-memory test database (StaticPool keeps a single shared connection)
# ---------------------------------------------------------------------------

TEST_DB_URL = "sqlite:///:memory:"

test_engine = create_engine(
    TEST_DB_URL,
    connect_args={"check_same_thread": False},
    poolclass=StaticPool,
)

TestingSessionLocal = sessionmaker(
    bind=test_engine,
    autocommit=False,
    autoflush=False,
    expire_on_commit=False,
)


@pytest.fixture(scope="session", autouse=True)
def init_test_db():
    """Create all ORM tables once before any test; drop them on exit."""
    Base.metadata.create_all(test_engine)
    yield
    Base.metadata.drop_all(test_engine)


@pytest.fixture
def db_session(init_test_db):
    """Fresh session over an empty prediction log."""
    session = TestingSessionLocal()
    session.query(PredictionRecord).delete()
    session.commit()
    yield session
    session.rollback()
    session.close()


def override_get_db():
    """Replace the production DB session with the test DB session."""
    session = TestingSessionLocal()
    try:
        yield session
    finally:
        session.close()


# ---------------------------------------------------------------------------
# Async client with a fresh snapshot store
# ---------------------------------------------------------------------------


@pytest.fixture
def store(monkeypatch):
    """Replace the app's SnapshotStore with an empty, Redis-free one."""
    fresh = SnapshotStore(tz="Europe/Paris", use_redis=False)
    monkeypatch.setattr(app_module, "store", fresh)
    return fresh


@pytest_asyncio.fixture
async def client(store, db_session):
    app.dependency_overrides[get_db] = override_get_db
    async with AsyncClient(
        transport=ASGITransport(app=app),
        base_url="http://test",
    ) as ac:
        yield ac
    app.dependency_overrides.clear()
