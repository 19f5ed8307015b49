"""A tour of the minimal reverse-mode autodiff core.

Builds a tiny computation by hand, runs backward(), and cross-checks the
analytic gradients against central finite differences.
"""

import numpy as np

from segkit.gradcheck import check_function
from segkit.tensor import Tensor, add, matmul, mul, relu, tmean

# ---------------------------------------------------------------------------
# 1. Forward and backward through a small expression graph
# ---------------------------------------------------------------------------
a = Tensor(np.array([[1.0, -2.0], [3.0, 0.5]]), requires_grad=True)
b = Tensor(np.array([[0.5, 1.0], [-1.0, 2.0]]), requires_grad=True)

y = tmean(relu(add(matmul(a, b), mul(a, a))))
y.backward()

print("loss          :", float(y.data))
print("dL/da         :\n", a.grad)
print("dL/db         :\n", b.grad)

# Gradients accumulate across backward calls until cleared
y2 = tmean(mul(a, a))
y2.backward()
print("after 2nd call:\n", a.grad)

# ---------------------------------------------------------------------------
# 2. Finite-difference verification of one op
# ---------------------------------------------------------------------------
x0 = np.linspace(-1.0, 1.0, 12).reshape(3, 4)
err = check_function(lambda t: tmean(relu(t)), x0)
print(f"relu mean-loss gradient rel error: {err:.2e}")
assert err < 1e-4
