use num_traits::Float;

/// Element type for tensors and kernels.
///
/// All production code runs on `f32`. The `f64` instantiation exists so
/// gradient checks and oracle tests can run the identical code path at a
/// precision where central finite differences are trustworthy.
pub trait Scalar:
    Float + num_traits::NumAssign + std::iter::Sum + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Error function at element width.
    fn erf_s(self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn erf_s(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn erf_s(self) -> Self {
        libm::erf(self)
    }
}
