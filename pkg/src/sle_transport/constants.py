"""Physical constants in the internal unit system (energies cm^-1, times fs)."""

#: Boltzmann constant, cm^-1 / K
KB_CM_PER_K = 0.69504

#: Reduced Planck constant, cm^-1 * fs.  omega[rad/fs] = E[cm^-1] / HBAR_CM_FS
HBAR_CM_FS = 5308.8

#: 1 ps^-1 expressed in fs^-1
PER_PS = 1e-3

#: 1 ns^-1 expressed in fs^-1
PER_NS = 1e-6
