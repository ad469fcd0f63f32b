import pytest

from src.services.batch_operations import batch_operations_service
from src.utils.run_reporter import run_reporter


@pytest.fixture(autouse=True)
def quiet_services():
    """Silence the reporter and restore single-threaded batches around every test"""
    run_reporter.configure(enabled=False)
    batch_operations_service.configure(1)
    yield
    run_reporter.configure(enabled=False)
    batch_operations_service.configure(1)
