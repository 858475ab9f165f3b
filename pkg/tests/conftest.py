import numpy as np
import pytest

from twistturn import PhysicalParams


@pytest.fixture(scope="session")
def params():
    return PhysicalParams()


def dense_spin_matrices(n_atoms):
    """Dense J_x, J_y, J_z in the J_z basis, built from first principles.

    Independent of the package's ladder recursions: raising elements are
    written explicitly from sqrt((J-m)(J+m+1)). The J_y sign follows the
    package convention J_y = i(J_+ - J_-)/2.
    """
    j = n_atoms / 2.0
    dim = n_atoms + 1
    m = np.arange(dim) - j
    jp = np.zeros((dim, dim), dtype=complex)
    for k in range(dim - 1):
        jp[k + 1, k] = np.sqrt((j - m[k]) * (j + m[k] + 1.0))
    jm = jp.conj().T
    jx = 0.5 * (jp + jm)
    jy = 0.5j * (jp - jm)
    jz = np.diag(m).astype(complex)
    return jx, jy, jz


def dense_hamiltonian(chi, chi_minus, omega, n_atoms):
    jx, _, jz = dense_spin_matrices(n_atoms)
    n = n_atoms
    return chi * jz @ jz + chi_minus * (n - 1) * jz + omega * jx
