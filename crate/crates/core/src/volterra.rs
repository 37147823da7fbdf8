//! Parallel Wiener-Hammerstein systems and their truncated Volterra kernels.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::C64;

/// `y = sum_l b_l * g_l(a_l * u)` with FIR filters `a_l` (length `L1`),
/// `b_l` (length `L2`) and polynomial nonlinearities
/// `g_l(x) = const0_l + sum_s c[s-1, l] x^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwhSystem {
    /// Front filters, `L1 x r`.
    pub a: DMatrix<f64>,
    /// Back filters, `L2 x r`.
    pub b: DMatrix<f64>,
    /// Polynomial coefficients, `d x r`; row `s-1` holds the coefficient of `x^s`.
    pub c: DMatrix<f64>,
    /// Constant term of each `g_l`. Only affects simulation.
    pub const0: Vec<f64>,
}

impl PwhSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        const0: Vec<f64>,
    ) -> Result<Self> {
        let r = a.ncols();
        if r == 0 || a.nrows() == 0 || b.nrows() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "PWH system needs L1, L2, r, d >= 1 (got L1={}, L2={}, r={}, d={})",
                a.nrows(),
                b.nrows(),
                r,
                c.nrows()
            )));
        }
        if b.ncols() != r || c.ncols() != r || const0.len() != r {
            return Err(Error::dims(
                "PwhSystem::new",
                format!("{r} branches"),
                format!(
                    "B has {}, C has {}, const0 has {}",
                    b.ncols(),
                    c.ncols(),
                    const0.len()
                ),
            ));
        }
        for l in 0..r {
            if a.column(l).iter().all(|&x| x == 0.0) || b.column(l).iter().all(|&x| x == 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "branch {} has an all-zero filter",
                    l + 1
                )));
            }
        }
        Ok(PwhSystem { a, b, c, const0 })
    }

    pub fn front_len(&self) -> usize {
        self.a.nrows()
    }

    pub fn back_len(&self) -> usize {
        self.b.nrows()
    }

    pub fn branches(&self) -> usize {
        self.a.ncols()
    }

    pub fn degree(&self) -> usize {
        self.c.nrows()
    }

    /// `L = L1 + L2 - 1`
    pub fn memory_len(&self) -> usize {
        self.front_len() + self.back_len() - 1
    }

    /// `g_l(x)` including the constant term.
    pub fn nonlinearity(&self, branch: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for s in (0..self.degree()).rev() {
            acc = (acc + self.c[(s, branch)]) * x;
        }
        acc + self.const0[branch]
    }
}

/// Symmetric kernels `H^(1)..H^(d)` of a degree-`d` map of `L` past inputs,
/// plus the constant `f0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    kernels: Vec<Tensor>,
    pub f0: f64,
}

impl KernelSet {
    pub fn new(kernels: Vec<Tensor>, f0: f64) -> Result<Self> {
        let Some(first) = kernels.first() else {
            return Err(Error::InvalidArgument("kernel set needs d >= 1".into()));
        };
        let memory = first.dims().first().copied().unwrap_or(0);
        if memory == 0 {
            return Err(Error::InvalidArgument(
                "kernel memory length must be >= 1".into(),
            ));
        }
        for (s, k) in kernels.iter().enumerate() {
            let order = s + 1;
            if k.order() != order || k.dims().iter().any(|&n| n != memory) {
                return Err(Error::dims(
                    "KernelSet::new",
                    format!("order-{order} kernel of size {memory}"),
                    format!("dims {:?}", k.dims()),
                ));
            }
        }
        Ok(KernelSet { kernels, f0 })
    }

    pub fn degree(&self) -> usize {
        self.kernels.len()
    }

    pub fn memory_len(&self) -> usize {
        self.kernels[0].dims()[0]
    }

    /// Kernel of degree `s` (1-based).
    pub fn kernel(&self, s: usize) -> Option<&Tensor> {
        s.checked_sub(1).and_then(|i| self.kernels.get(i))
    }

    pub fn kernels(&self) -> &[Tensor] {
        &self.kernels
    }

    fn check_degree(&self, s: usize) -> Result<&Tensor> {
        self.kernel(s).ok_or(Error::DegreeOutOfRange {
            degree: s,
            max: self.degree(),
        })
    }

    fn check_point(&self, u: &[C64]) -> Result<()> {
        if u.len() != self.memory_len() {
            return Err(Error::dims("kernel evaluation", self.memory_len(), u.len()));
        }
        Ok(())
    }
}

/// Output of [`simulate`]. The first `transient` samples depend on the
/// zero history assumed before the input starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub output: Vec<f64>,
    pub transient: usize,
}

impl Simulation {
    pub fn steady_state(&self) -> &[f64] {
        &self.output[self.transient..]
    }

    /// True when the input was too short to reach steady state.
    pub fn transient_only(&self) -> bool {
        self.transient >= self.output.len()
    }
}

/// Time-domain response with `u(t) = 0` before the first sample, using
/// `(a * x)(t) = sum_i x(t - i + 1) a_i`.
pub fn simulate(sys: &PwhSystem, input: &[f64]) -> Result<Simulation> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = input.len();
    let (l1, l2) = (sys.front_len(), sys.back_len());
    let mut output = vec![0.0; n];
    // z_l(t) for t in [1 - (L2-1), n]; index shifted by L2-1
    let shift = l2 - 1;
    let mut z = vec![0.0; n + shift];
    for l in 0..sys.branches() {
        for (pos, zt) in z.iter_mut().enumerate() {
            let t = pos as isize - shift as isize;
            let mut x = 0.0;
            for i in 0..l1 {
                let tau = t - i as isize;
                if tau >= 0 {
                    x += input[tau as usize] * sys.a[(i, l)];
                }
            }
            *zt = sys.nonlinearity(l, x);
        }
        for (t, yt) in output.iter_mut().enumerate() {
            for j in 0..l2 {
                *yt += z[t + shift - j] * sys.b[(j, l)];
            }
        }
    }
    Ok(Simulation {
        output,
        transient: (sys.memory_len() - 1).min(n),
    })
}

/// `(u(t), u(t-1), .., u(t-L+1))` with zeros before the start (0-based `t`).
pub fn past_inputs(input: &[f64], t: usize, memory: usize) -> Vec<C64> {
    (0..memory)
        .map(|i| {
            t.checked_sub(i)
                .map_or(C64::new(0.0, 0.0), |tau| C64::new(input[tau], 0.0))
        })
        .collect()
}

fn contract_all_but_first(kernel: &Tensor, u: &[C64]) -> Result<Tensor> {
    let mut t = kernel.clone();
    while t.order() > 1 {
        t = t.contract(t.order() - 1, u)?;
    }
    Ok(t)
}

/// `f^(s)(u) = H^(s) •1 u •2 u .. •s u`
pub fn homogeneous_term(k: &KernelSet, s: usize, u: &[C64]) -> Result<C64> {
    let kernel = k.check_degree(s)?;
    k.check_point(u)?;
    let v = contract_all_but_first(kernel, u)?;
    Ok(v.data().iter().zip(u).map(|(a, b)| a * b).sum())
}

/// `f(u) = f0 + sum_s f^(s)(u)`
pub fn evaluate_kernel_output(k: &KernelSet, u: &[C64]) -> Result<C64> {
    k.check_point(u)?;
    let mut acc = C64::new(k.f0, 0.0);
    for s in 1..=k.degree() {
        acc += homogeneous_term(k, s, u)?;
    }
    Ok(acc)
}

/// `grad f^(s)(u) = s * (H^(s) •2 u .. •s u)`, exploiting kernel symmetry.
pub fn gradient_of_homogeneous(k: &KernelSet, s: usize, u: &[C64]) -> Result<Vec<C64>> {
    let kernel = k.check_degree(s)?;
    k.check_point(u)?;
    let v = contract_all_but_first(kernel, u)?;
    let scale = s as f64;
    Ok(v.data().iter().map(|z| z * scale).collect())
}

/// Kernels of a PWH system.
///
/// Expanding `b^T g(V^T u)` for the monomial parts gives
/// `H^(s)[i1..is] = sum_l c_{l,s} sum_k B[k,l] prod_j A~[i_j - k + 1, l]`
/// with `A~` the front filter extended by zeros. The constant is
/// `f0 = sum_l const0_l sum_k B[k,l]`.
pub fn synthesize_kernels(sys: &PwhSystem) -> KernelSet {
    let memory = sys.memory_len();
    let (l1, l2) = (sys.front_len(), sys.back_len());
    let a_ext = |m: isize, l: usize| -> f64 {
        if m >= 0 && (m as usize) < l1 {
            sys.a[(m as usize, l)]
        } else {
            0.0
        }
    };
    let kernels = (1..=sys.degree())
        .map(|s| {
            let dims = vec![memory; s];
            Tensor::from_fn(&dims, |idx| {
                let mut acc = 0.0;
                for l in 0..sys.branches() {
                    let coef = sys.c[(s - 1, l)];
                    if coef == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for k in 0..l2 {
                        let prod: f64 = idx
                            .iter()
                            .map(|&i| a_ext(i as isize - k as isize, l))
                            .product();
                        inner += sys.b[(k, l)] * prod;
                    }
                    acc += coef * inner;
                }
                C64::new(acc, 0.0)
            })
        })
        .collect();
    let f0 = (0..sys.branches())
        .map(|l| sys.const0[l] * sys.b.column(l).sum())
        .sum();
    KernelSet { kernels, f0 }
}
