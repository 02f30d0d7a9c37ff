import subprocess
import sys

import pytest

from ggssm import _backend, backend


def probe(env_value):
    code = "import ggssm; print(ggssm.backend())"
    env = {"GGSSM_BACKEND": env_value, "PATH": ""}
    return subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)


def test_python_always_available():
    assert "python" in _backend.AVAILABLE


def test_env_forces_python():
    r = probe("python")
    assert r.returncode == 0 and r.stdout.strip() == "python"


def test_env_auto_prefers_compiled():
    want = "compiled" if "compiled" in _backend.AVAILABLE else "python"
    assert probe("auto").stdout.strip() == want


def test_env_rejects_unknown():
    r = probe("gpu")
    assert r.returncode != 0 and "GGSSM_BACKEND" in r.stderr


def test_use_restores():
    before = backend()
    with _backend.use("python") as k:
        assert backend() == "python" and k.BACKEND == "python"
    assert backend() == before


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _backend.set_backend("gpu")
