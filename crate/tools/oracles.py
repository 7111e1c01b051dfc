"""Independent numpy oracles for values frozen into the Rust tests."""
import numpy as np
np.set_printoptions(precision=17)

X = np.array([[1.0, 0.5], [-0.3, 2.0], [0.8, -1.2]])
Y = np.array([1.0, -1.0, 1.0])
S0 = 0.5

def logistic(theta):
    z = Y * (X @ theta)
    v = np.logaddexp(0, -z).sum()
    s = 1 / (1 + np.exp(z))
    g = -(X * (Y * s)[:, None]).sum(0)
    w = s * (1 - s)
    H = (X * w[:, None]).T @ X
    return v, g, H

th = np.array([0.3, -0.2])
v, g, H = logistic(th)
print("logistic value", repr(v)); print("logistic grad", g.tolist()); print("logistic hess", H.ravel().tolist())

# Regularized optimum by Newton, certified by the gradient norm.
t = np.zeros(2)
for _ in range(50):
    _, g, H = logistic(t)
    g = g + S0 * t; H = H + S0 * np.eye(2)
    t = t - np.linalg.solve(H, g)
_, g, _ = logistic(t)
print("newton theta", t.tolist(), "grad norm", np.linalg.norm(g + S0 * t))
print("newton objective", repr(logistic(t)[0] + 0.5 * S0 * t @ t))

# IVON update, three steps with fixed estimates.
b1, b2, delta, xi, eta = 0.9, 0.99, 0.1, 1e3, 0.05
m = np.array([1.0, -2.0]); h = np.array([0.5, 0.5]); gm = np.zeros(2)
ghat = [np.array([0.4, -0.1]), np.array([0.2, 0.3]), np.array([-0.5, 0.6])]
hhat = [np.array([0.8, 0.1]), np.array([-0.3, 0.9]), np.array([1.2, 0.05])]
for k in range(3):
    gm = b1 * gm + (1 - b1) * ghat[k]
    h = b2 * h + (1 - b2) * hhat[k] + 0.5 * (1 - b2) ** 2 * (h - hhat[k]) ** 2 / (h + delta)
    gbar = gm / (1 - b1 ** (k + 1))
    m = m - eta * np.clip((gbar + delta * m) / (h + delta), -xi, xi)
print("ivon m", m.tolist()); print("ivon h", h.tolist()); print("ivon g", gm.tolist())

# VON-PoCo inner step, zero noise, quadratic sites l_i = 0.5 (th-c)^T A (th-c)/N.
A = np.array([[2.0, 0.5], [0.5, 1.0]]); c = np.array([1.0, -1.0]); N = 4; s0 = 0.5
def grad_i(th): return A @ (th - c) / N + s0 * th / N
def hess_i(th): return A / N + s0 * np.eye(2) / N
m_out = np.array([0.2, 0.1]); S = np.eye(2) * 3.0
g_out = N * grad_i(m_out); H_out = N * hess_i(m_out)
m_in = np.array([0.5, -0.4])  # after some movement; snapshot kept at m_out
eta, beta = 0.5, 0.3
g_in = grad_i(m_in) - grad_i(m_out) + g_out / N
Hm = H_out / N - hess_i(m_out)
H_in = hess_i(m_in) + Hm
S = (1 - beta) * S + beta * N * H_in
m_new = m_in - eta * N * np.linalg.solve(S, g_in + Hm @ (m_in - m_out))
print("von m", m_new.tolist()); print("von S", S.ravel().tolist())

# rho recurrence over three refreshes, g_hat_k = A (m_k - c) for one example.
rho = 0.3; gout = None
for mk in [np.array([0.0, 0.0]), np.array([1.0, 2.0]), np.array([-1.0, 0.5])]:
    gh = A @ (mk - c)
    gout = gh if gout is None else rho * gout + (1 - rho) * gh
print("rho g_out", gout.tolist())
