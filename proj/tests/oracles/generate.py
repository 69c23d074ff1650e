"""Reference values for the unit tests, computed independently with numpy/scipy.

Run: python3 tests/oracles/generate.py
"""
import gzip
import numpy as np
from scipy.integrate import solve_ivp, quad


def mode_ode(gamma, y, f0, k, lam, t):
    beta = 2 * (k - 1) * lam

    def rhs(s, f):
        return [-gamma * np.exp(-beta * s) * (f[0] - y) - k * lam * f[0]]

    sol = solve_ivp(rhs, (0, t), [f0], method="DOP853", rtol=1e-13, atol=1e-15)
    return sol.y[0, -1]


print("# mode values (gamma, y, f0, k, lambda, t, f)")
for args in [(2.0, 1.0, 0.3, 2, 0.01, 1.0), (2.0, 1.0, 0.3, 2, 0.01, 10.0), (2.0, 1.0, 0.3, 2, 0.01, 100.0),
             (2.0, 1.0, 0.3, 2, 0.01, 500.0), (50.0, -0.7, 0.2, 3, 0.1, 0.5), (50.0, -0.7, 0.2, 3, 0.1, 5.0),
             (50.0, -0.7, 0.2, 3, 0.1, 50.0), (0.05, 2.0, 0.0, 4, 0.02, 30.0)]:
    print(args, repr(mode_ode(*args)))

print("# deep linear L=2, n=100, ntk: largest root in (0,1) of f(1-f)^3 = lambda^3 n^2")
for lam in [0.01, 0.02]:
    c = lam ** 3 * 100 ** 2
    # f(1-f)^3 - c = -f^4 + 3f^3 - 3f^2 + f - c
    r = np.roots([-1, 3, -3, 1, -c])
    r = [x.real for x in r if abs(x.imag) < 1e-12 and 0 < x.real < 1]
    print(lam, repr(max(r)))

print("# small MLP forward, ntk, relu, sigma_w=1")
W0 = np.array([[1.0, 2.0], [-1.0, 0.5], [0.3, -0.7]])
W1 = np.array([[0.5, -1.0, 2.0]])
x = np.array([1.0, -2.0])
h = np.maximum(W0 @ x / np.sqrt(2), 0)
f = W1 @ h / np.sqrt(3)
print(repr(f[0]))
# gradient wrt W1 and W0 and NTK diagonal
gW1 = h / np.sqrt(3)
d = (W1[0] / np.sqrt(3)) * (W0 @ x > 0)
gW0 = np.outer(d, x) / np.sqrt(2)
print("ntk diag", repr(gW1 @ gW1 + (gW0 ** 2).sum()))

print("# mnist idx")
with open("data/mnist/train-labels-idx1-ubyte", "rb") as fh:
    lab = np.frombuffer(fh.read()[8:], dtype=np.uint8)
with open("data/mnist/train-images-idx3-ubyte", "rb") as fh:
    img = np.frombuffer(fh.read()[16:], dtype=np.uint8).reshape(-1, 784)
print("n", len(lab), "label0", lab[0], "sum0/255", repr(img[0].sum() / 255.0), "counts", np.bincount(lab))
with open("data/mnist/t10k-labels-idx1-ubyte", "rb") as fh:
    tl = np.frombuffer(fh.read()[8:], dtype=np.uint8)
print("test n", len(tl), "counts", np.bincount(tl), "last label", tl[-1])

print("# ridge: kernel K, y, lambda -> K (K + lambda I)^-1 y")
K = np.array([[2.0, 0.5, 0.1], [0.5, 1.0, 0.3], [0.1, 0.3, 0.5]])
yv = np.array([1.0, -1.0, 0.5])
print([repr(v) for v in K @ np.linalg.solve(K + 0.1 * np.eye(3), yv)])
print("# eigenvalues of K", [repr(v) for v in np.linalg.eigvalsh(K)[::-1]])
