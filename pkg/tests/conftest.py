import numpy as np
import pytest

from touchauth import config, session_io


@pytest.fixture(scope="session")
def cfg():
    return config.default_config()


def make_session(n_cap=4, n_imu=16, rows=27, cols=15, cap_values=None,
                 label="genuine", session_id="s0", user_id="u0"):
    """Small hand-built session for unit tests."""
    meta = session_io.SessionMeta(session_id=session_id, user_id=user_id,
                                  label=label, cap_rows=rows, cap_cols=cols)
    cap = []
    for i in range(n_cap):
        values = cap_values[i] if cap_values is not None else np.zeros((rows, cols), dtype=np.int64)
        cap.append(session_io.CapFrame(ts_ms=i * 50, values=np.asarray(values, dtype=np.int64)))
    imu = [session_io.ImuSample(ts_ms=i * 5, a=(0.0, 0.0, 9.81),
                                g=(0.0, 0.0, 0.0), m=(25.0, 0.0, -43.0))
           for i in range(n_imu)]
    return session_io.Session(meta=meta, cap=tuple(cap), imu=tuple(imu))
