import os

import pytest


@pytest.fixture(scope="session", autouse=True)
def isolated_log_dir(tmp_path_factory):
    """
    Points the rotating log file at a temporary directory for the whole test
    session, so tests that run main() never write into the user's AppData.
    """
    previous = os.environ.get('WSED_LOG_DIR')
    os.environ['WSED_LOG_DIR'] = str(tmp_path_factory.mktemp('logs'))
    yield
    if previous is None:
        os.environ.pop('WSED_LOG_DIR', None)
    else:
        os.environ['WSED_LOG_DIR'] = previous
