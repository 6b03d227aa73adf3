#pragma once

#include "cgir/ops.hpp"

namespace cgir {

// Fourier-domain primitives on (B,C,H,W) maps. Convention: unnormalized
// forward DFT, inverse scaled by 1/(H*W). Gradients use the adjoint DFT.
struct ComplexVar {
  Var re, im;
};

// Amplitude is the modulus (nonnegative), phase the argument in (-pi, pi].
struct SpectrumVar {
  Var amplitude, phase;
};

ComplexVar fft2(const Var& x);
ComplexVar ifft2(const ComplexVar& z);

SpectrumVar amp_phase(const Var& x);
// amplitude * exp(i*phase) as a complex pair.
ComplexVar polar(const SpectrumVar& s);
// Projects onto the conjugate-symmetric subspace: Z := (Z[u,v] +
// conj(Z[-u,-v]))/2. Identity for spectra of real signals; used before an
// inverse transform whose result must be exactly real.
ComplexVar symmetrize(const ComplexVar& z);
// Wraps values into (-pi, pi]; gradient passes through unchanged.
Var wrap_phase(const Var& phi);

// Inverse transform of amplitude*e^{i phase}. Asserts max |Im| < 1e-4 and
// discards the imaginary part; a residue above threshold raises
// NumericalError (the amplitude/phase pair is inconsistent).
Var recompose(const SpectrumVar& s);

}  // namespace cgir
