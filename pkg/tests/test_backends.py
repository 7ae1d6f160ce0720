import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lazymar import _fallback, backend
from lazymar.cache import CacheSchedule
from lazymar.decode import run_generation

needs_compiled = pytest.mark.skipif(not backend.compiled_available(),
                                    reason="compiled kernels not built")


@needs_compiled
@settings(max_examples=40)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32))
def test_kernels_bit_identical(n, k, m, seed):
    from lazymar import _kernels

    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, k)) * 1e3, rng.normal(size=(k, m))
    assert np.array_equal(_kernels.matmul(a, b), _fallback.matmul(a, b))
    assert np.array_equal(_kernels.row_sum(a), _fallback.row_sum(a))


@needs_compiled
def test_generation_identical_across_backends(tiny_weights):
    sched = CacheSchedule(warmup=1, period=3, n_compute=5)
    with backend.use_backend("python"):
        slow = run_generation(tiny_weights, sched, 6, 9).report
    with backend.use_backend("compiled"):
        fast = run_generation(tiny_weights, sched, 6, 9).report
    assert slow == fast


def test_backend_switching():
    before = backend.active_backend()
    with backend.use_backend("python"):
        assert backend.active_backend() == "python"
        assert backend.kernels() is _fallback
    assert backend.active_backend() == before
    with pytest.raises(ValueError):
        backend.set_backend("gpu")


def test_fallback_selected_without_extension():
    import subprocess
    import sys

    code = ("import sys; sys.modules['lazymar._kernels'] = None\n"
            "from lazymar import backend\n"
            "assert not backend.compiled_available() and backend.active_backend() == 'python'\n"
            "from lazymar.tensor import matmul; import numpy as np\n"
            "assert matmul(np.ones((2, 3)), np.ones((3, 1))).tolist() == [[3.0], [3.0]]\n")
    subprocess.run([sys.executable, "-c", code], check=True)
