"""Second-moment noise estimates for GSW material and extended key switching.

All figures are variances of one coefficient of the noise term (t already
folded in).  They are heuristics, not worst-case bounds: terms are treated as
independent except where noise is known to be shared.

Shared noise matters in one place.  Every row of an extended GSW ciphertext
that came from the randomness encryption F reuses the same beta noise terms
of F.  Summing many such rows against bit vectors (whose coefficients have
mean 1/2, not 0) makes those terms add coherently, and key switching with an
extended key stacks three such sums (ciphertext bits, helper-row bits,
extension bits).  That coherent term dominates and grows like beta^5 eta^4.
"""
from __future__ import annotations

from typing import Sequence

from .params import RingParams

# fitted against measured key-switch noise at eta 16 and 64; the factor
# leaves about one bit of head room over the worst seed observed
COHERENT_SCALE = 4.0


def own_row_var(params: RingParams, pk_noise_var: float, pk_secret_var: float) -> float:
    """Fresh GSW (or randomness-encryption) row against the encrypting key."""
    t, eta, chi = params.t, params.eta, params.chi_var
    return t * t * (eta * chi * pk_noise_var + chi + eta * chi * pk_secret_var)


def bit_sum_var(eta: int, n_bits: int, row_var: float) -> float:
    """sum of n_bits (binary polynomial) * (independent noise) terms."""
    return n_bits * (eta / 2.0) * row_var


def shared_bit_sum_var(eta: int, n_bits: int, beta_shared: int, shared_var: float) -> float:
    """Coherent part when every summed row carries the same beta_shared noise terms.

    The weight on each shared term is a sum of n_bits products of binary
    polynomials; its coefficients have mean of order n_bits * eta / 4 with a
    sign ramp, giving a mean square of about n_bits^2 eta^2 / 48.
    """
    weight = n_bits * n_bits * eta * eta / 48.0 + n_bits * eta * 3.0 / 16.0
    return beta_shared * eta * shared_var * weight


def external_product_var(
    eta: int,
    n_bits: Sequence[int],
    row_var: Sequence[float],
    shared_var: Sequence[float],
    beta_shared: int,
    message_var: float,
    input_var: float,
) -> float:
    """BitDecomp(v) * C where v carries n_bits[p] live bits against row block p.

    ``message_var`` is the second moment of C's message coefficients and
    ``input_var`` the noise of v itself, which gets multiplied by the message.
    """
    var = eta * message_var * input_var
    for n, rv, sv in zip(n_bits, row_var, shared_var):
        var += bit_sum_var(eta, n, rv)
        if sv:
            var += shared_bit_sum_var(eta, n, beta_shared, sv)
    return var


def extended_coherent_var(params: RingParams, level: int, rand_vars: Sequence[float]) -> float:
    """Coherent noise one extended tensor key switch adds (before rescaling)."""
    beta = params.beta(level)
    return COHERENT_SCALE * beta ** 5 * float(params.eta) ** 4 * sum(rand_vars)
