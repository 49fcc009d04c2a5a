"""Independent reference computations the tests check protocol output against.

Everything here is written from the protocol's mathematical definition, not
from the package's code paths: encoding uses Fraction arithmetic instead of
the dyadic bit tricks, polynomial evaluation uses direct powers instead of
Horner plus masked corrections, and gradients are accumulated as exact
integers before a single final reduction. Agreement between these and the
protocol is therefore evidence, not tautology.
"""

from __future__ import annotations

from fractions import Fraction


def oracle_encode(x: float, scale: int, tau: int, k: int) -> int:
    """Round-half-away-from-zero fixed-point encoding via Fractions."""
    f = Fraction(x) * (1 << (scale * tau))
    mag2 = abs(f) * 2
    # floor(|f| + 1/2) without floats
    mag = (mag2.numerator + mag2.denominator) // (2 * mag2.denominator)
    if x < 0 and mag:
        return (1 << k) - mag
    return mag % (1 << k)


def oracle_decode(v: int, scale: int, tau: int, k: int) -> float:
    signed = v - (1 << k) if v >= (1 << (k - 1)) else v
    return signed / (1 << (scale * tau))


def oracle_sigma3_ring(v: int, q: tuple[int, int, int, int], k: int) -> int:
    """sigma3 at a ring point by direct powers, one reduction at the end."""
    q0, q1, q2, q3 = q
    return (q0 + q1 * v + q2 * v**2 + q3 * v**3) % (1 << k)


def oracle_inner_product_ring(
    theta: list[float], row: list[float], tau: int, k: int
) -> int:
    """Encoded score theta_0 + theta . x at scale 2, exact in the ring."""
    acc = oracle_encode(theta[0], 2, tau, k)
    for t, x in zip(theta[1:], row):
        acc += oracle_encode(t, 1, tau, k) * oracle_encode(x, 1, tau, k)
    return acc % (1 << k)


def oracle_gradient_ring(
    kind: str,
    theta: list[float],
    rows: list[list[float]],
    labels: list[float],
    q: tuple[int, int, int, int] | None,
    tau: int,
    k: int,
) -> list[int]:
    """Exact ring value of the local gradient a correct protocol run must
    produce after its blind is stripped.

    Linear/ridge: err_i at scale 2, coordinate terms at scale 3.
    Logistic: err_i at scale 7 (cubic output), coordinate terms at scale 8.
    """
    mod = 1 << k
    n = len(rows[0])
    acc = [0] * (n + 1)
    for row, label in zip(rows, labels):
        score = oracle_inner_product_ring(theta, row, tau, k)
        if kind == "logistic":
            assert q is not None
            pred = oracle_sigma3_ring(score, q, k)
            err = pred - oracle_encode(label, 7, tau, k)
        else:
            err = score - oracle_encode(label, 2, tau, k)
        acc[0] += err
        for j, x in enumerate(row):
            acc[j + 1] += err * oracle_encode(x, 1, tau, k)
    return [a % mod for a in acc]


def oracle_float_inner(theta: list[float], row: list[float]) -> float:
    return theta[0] + sum(t * x for t, x in zip(theta[1:], row))


def oracle_unmask(
    sigma3_z: int, z: int, y: int, r: int, q: tuple[int, int, int, int], k: int
) -> int:
    """The correct mask-removal expression, evaluated directly."""
    q0, q1, q2, q3 = q
    mod = 1 << k
    return (
        sigma3_z
        - 3 * q3 * r * z * z
        - (2 * q2 * r - 3 * q3 * r * r) * y
        - (q1 * r + q2 * r * r - 2 * q3 * r**3)
    ) % mod


def oracle_unmask_naive(
    sigma3_z: int, z: int, y: int, r: int, q: tuple[int, int, int, int], k: int
) -> int:
    """The broken variant: correct expression plus its known residual."""
    q0, q1, q2, q3 = q
    mod = 1 << k
    residual = -2 * q0 - 6 * q3 * r**3 + 3 * q3 * r * r * y
    return (oracle_unmask(sigma3_z, z, y, r, q, k) + residual) % mod
