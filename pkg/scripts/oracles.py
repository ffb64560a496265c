"""Independent oracles for the values frozen into the unit tests.

Nothing here imports the package. Each oracle uses a closed form or a
high-precision quadrature built from the model definitions directly, so the
frozen numbers are a second route, not a replay of the library code.

    python3 scripts/oracles.py
"""

from mpmath import mp, mpf, cos, pi, quad, sin, sqrt, tanh

mp.dps = 40


def uniform_rotation_energy(n, N_twist, eps, L, M, alpha):
    """Discrete energy of a unit field rotating by a constant angle per cell.

    Every cell sees the same rotation phi, so the cell sum collapses:
    |b-a|^2 = 4 sin^2(phi/2), |a+b|^2/4 = cos^2(phi/2), cross product = sin(phi).
    """
    h = mpf(1) / (n - 1)
    phi = (2 * pi * M + alpha) * h
    grad = eps / (2 * h**2) * 4 * sin(phi / 2) ** 2
    pot = (cos(phi / 2) ** 2 - 1) ** 2 / (4 * eps)
    twist = L / 2 * (sin(phi) / h - 2 * pi * N_twist) ** 2
    return (n - 1) * h * (grad + pot + twist)


def modica_mortola_half_cost():
    """Continuum cost of rho = tanh(s / (sqrt 2 eps)) on s > 0, eps scaled out."""
    # (eps/2) rho'^2 + (rho^2-1)^2/(4 eps) with s = eps * y; the eps cancels
    g = lambda y: (1 - tanh(y / sqrt(2)) ** 2) ** 2 / 4 + (tanh(y / sqrt(2)) ** 2 - 1) ** 2 / 4
    return quad(g, [0, mp.inf])


def main():
    print("uniform twist M=N=2, eps=0.01, L=1, discrete energies:")
    for n in (101, 201, 401, 801):
        print(f"  n={n}: {mp.nstr(uniform_rotation_energy(n, 2, mpf('0.01'), 1, 2, 0), 20)}")
    print("  continuum 2 (pi N)^2 eps =", mp.nstr(2 * (pi * 2) ** 2 * mpf("0.01"), 20))

    val = uniform_rotation_energy(2001, 2, mpf("0.05"), mpf("0.5"), 1, 0)
    print("uniform twist M=1, N=2, eps=0.05, L=0.5, n=2001:", mp.nstr(val, 20))
    cont = mpf("0.05") * (2 * pi) ** 2 / 2 + mpf("0.5") / 2 * (2 * pi) ** 2
    print("  continuum:", mp.nstr(cont, 20))

    half = modica_mortola_half_cost()
    print("Modica-Mortola half transition:", mp.nstr(half, 20), " sqrt(2)/3 =", mp.nstr(sqrt(2) / 3, 20))

    print("saddle N=1, M=0, alpha=0, L=0.1:", mp.nstr(2 * pi**2 * mpf("0.1") + 2 * sqrt(2) / 3, 12))
    print("local energy M=N+1, alpha=0, L=1:", mp.nstr(mpf(1) / 2 * (2 * pi) ** 2, 12))
    print("one-jump vs twist at L=1, alpha=pi:", mp.nstr(pi**2 / 2, 12), mp.nstr(2 * sqrt(2) / 3, 12))
    print("jump threshold 4 sqrt(2)/3:", mp.nstr(4 * sqrt(2) / 3, 12), " alpha* =", mp.nstr(sqrt(4 * sqrt(2) / 3), 12))

    # rescaled energy of w = 1 at eps^(-beta) = 2 equals the gradient term of e^{4 pi i x}
    for n in (101, 4001):
        print(
            f"rescaled w=1, eps=1/16, beta=1/4, L=1, n={n}:",
            mp.nstr(uniform_rotation_energy(n, 2, mpf(1) / 16, 1, 2, 0), 20),
        )


if __name__ == "__main__":
    main()
