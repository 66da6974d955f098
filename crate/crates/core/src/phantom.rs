//! Synthetic multi-modal tumor phantoms with analytically known geometry.
//!
//! A spherical "brain" sits in the middle of a cubic volume; inside it an
//! axis-aligned tumor ellipsoid is split by normalized radius into a
//! necrotic core, an enhancing ring and an edema shell. Each tissue has its
//! own mean intensity per modality, plus seeded Gaussian noise inside the
//! brain. Voxel `(i, j, k)` is sampled at its integer coordinates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::preprocess::MIN_MASK_FRACTION;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Outside,
    Brain,
    Edema,
    Enhancing,
    Necrosis,
}

impl Tissue {
    /// Raw segmentation code in the BraTS convention (enhancing = 4).
    pub fn raw_label(self) -> u8 {
        match self {
            Tissue::Outside | Tissue::Brain => 0,
            Tissue::Necrosis => 1,
            Tissue::Edema => 2,
            Tissue::Enhancing => 4,
        }
    }

    /// Class index after remapping.
    pub fn class(self) -> u8 {
        match self.raw_label() {
            4 => 3,
            r => r,
        }
    }
}

/// Mean intensity per tissue for (FLAIR, T1CE, T2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueIntensities {
    pub brain: [f64; 3],
    pub edema: [f64; 3],
    pub enhancing: [f64; 3],
    pub necrosis: [f64; 3],
}

impl Default for TissueIntensities {
    fn default() -> Self {
        Self {
            brain: [0.35, 0.40, 0.30],
            edema: [0.90, 0.45, 0.80],
            enhancing: [0.60, 0.95, 0.55],
            necrosis: [0.40, 0.15, 0.95],
        }
    }
}

impl TissueIntensities {
    pub fn of(&self, t: Tissue) -> [f64; 3] {
        match t {
            Tissue::Outside => [0.0; 3],
            Tissue::Brain => self.brain,
            Tissue::Edema => self.edema,
            Tissue::Enhancing => self.enhancing,
            Tissue::Necrosis => self.necrosis,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub extent: usize,
    pub brain_radius: f64,
    /// Per-axis tumor radius drawn uniformly from `[min, max]` voxels.
    pub tumor_radius: (f64, f64),
    /// Tumor center offset from the volume center, uniform in `[-j, j]` per axis.
    pub center_jitter: f64,
    /// Normalized radius below which tissue is necrotic.
    pub necrosis_frac: f64,
    /// Normalized radius below which tissue is enhancing (above the core).
    pub enhancing_frac: f64,
    pub intensities: TissueIntensities,
    pub noise: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Geometry scaled to the volume extent.
    pub fn for_extent(extent: usize, seed: u64) -> Self {
        let e = extent as f64;
        Self {
            extent,
            brain_radius: 0.45 * e,
            tumor_radius: (0.18 * e, 0.24 * e),
            center_jitter: 0.04 * e,
            necrosis_frac: 0.4,
            enhancing_frac: 0.7,
            intensities: TissueIntensities::default(),
            noise: 0.02,
            seed,
        }
    }

    /// Sets the tumor radius range to `[0.75·r, r]`.
    pub fn with_radius(mut self, r: f64) -> Self {
        self.tumor_radius = (0.75 * r, r);
        self
    }

    pub fn center(&self) -> f64 {
        (self.extent as f64 - 1.0) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInfeasible(m));
        let (rmin, rmax) = self.tumor_radius;
        if self.extent < 8 {
            return bad(format!("extent {} < 8", self.extent));
        }
        if !(rmin > 0.0 && rmin <= rmax) {
            return bad(format!("tumor radius range ({rmin}, {rmax}) is empty"));
        }
        if !(0.0 < self.necrosis_frac && self.necrosis_frac < self.enhancing_frac && self.enhancing_frac < 1.0) {
            return bad(format!(
                "sub-region fractions must satisfy 0 < {} < {} < 1",
                self.necrosis_frac, self.enhancing_frac
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.center_jitter >= 0.0) {
            return bad("noise and jitter must be non-negative".into());
        }
        if self.brain_radius > self.center() {
            return bad(format!(
                "brain radius {} exceeds the half-extent of a {}³ volume",
                self.brain_radius, self.extent
            ));
        }
        if rmax + self.center_jitter > self.brain_radius {
            return bad(format!(
                "tumor radius {rmax} plus jitter {} exceeds brain radius {} in a {}³ volume",
                self.center_jitter, self.brain_radius, self.extent
            ));
        }
        let min_volume = 4.0 / 3.0 * core::f64::consts::PI * rmin * rmin * rmin;
        let total = (self.extent * self.extent * self.extent) as f64;
        if min_volume / total < MIN_MASK_FRACTION {
            return bad(format!(
                "smallest tumor covers {:.4} of the volume, below {MIN_MASK_FRACTION}",
                min_volume / total
            ));
        }
        Ok(())
    }
}

/// Tumor ellipsoid of one case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumorGeometry {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

/// Tissue at voxel `p` for a given geometry.
pub fn tissue_at(spec: &PhantomSpec, geom: &TumorGeometry, p: [usize; 3]) -> Tissue {
    let c = spec.center();
    let mut r_brain = 0.0;
    let mut rho = 0.0;
    for a in 0..3 {
        let x = p[a] as f64;
        r_brain += (x - c) * (x - c);
        let u = (x - geom.center[a]) / geom.radii[a];
        rho += u * u;
    }
    let rho = num_traits::Float::sqrt(rho);
    if r_brain > spec.brain_radius * spec.brain_radius {
        Tissue::Outside
    } else if rho <= spec.necrosis_frac {
        Tissue::Necrosis
    } else if rho <= spec.enhancing_frac {
        Tissue::Enhancing
    } else if rho <= 1.0 {
        Tissue::Edema
    } else {
        Tissue::Brain
    }
}

/// Modalities `(FLAIR, T1CE, T2)` and the raw segmentation of one phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub case_id: String,
    pub geometry: TumorGeometry,
    pub flair: Tensor<f32>,
    pub t1ce: Tensor<f32>,
    pub t2: Tensor<f32>,
    /// Raw BraTS-style codes `{0, 1, 2, 4}`.
    pub seg: Vec<u8>,
}

impl PhantomCase {
    /// Fraction of voxels inside the tumor.
    pub fn tumor_fraction(&self) -> f64 {
        self.seg.iter().filter(|&&v| v != 0).count() as f64 / self.seg.len() as f64
    }
}

pub fn case_id(index: usize) -> String {
    format!("phantom_{index:04}")
}

/// Seeded geometry of case `index`.
pub fn draw_geometry(spec: &PhantomSpec, index: usize) -> TumorGeometry {
    let mut r = rng::stream(spec.seed, "phantom.geometry", index as u64);
    let (rmin, rmax) = spec.tumor_radius;
    let c = spec.center();
    let mut center = [0.0; 3];
    let mut radii = [0.0; 3];
    for a in 0..3 {
        radii[a] = if rmax > rmin { r.random_range(rmin..=rmax) } else { rmin };
        let j = spec.center_jitter;
        center[a] = c + if j > 0.0 { r.random_range(-j..=j) } else { 0.0 };
    }
    TumorGeometry { center, radii }
}

/// Rasterizes a case with explicit geometry; noise is keyed by `index`.
pub fn rasterize(spec: &PhantomSpec, case_id: String, index: usize, geometry: TumorGeometry) -> PhantomCase {
    let e = spec.extent;
    let n = e * e * e;
    let mut vols = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut seg = Vec::with_capacity(n);
    let mut noise_rng = rng::stream(spec.seed, "phantom.noise", index as u64);
    let normal = Normal::new(0.0, spec.noise.max(0.0)).expect("non-negative noise");
    for i in 0..e {
        for j in 0..e {
            for k in 0..e {
                let t = tissue_at(spec, &geometry, [i, j, k]);
                seg.push(t.raw_label());
                let mean = spec.intensities.of(t);
                for (m, vol) in vols.iter_mut().enumerate() {
                    let v = if t == Tissue::Outside || spec.noise == 0.0 {
                        mean[m]
                    } else {
                        mean[m] + normal.sample(&mut noise_rng)
                    };
                    vol.push(v as f32);
                }
            }
        }
    }
    let [f, c, t] = vols;
    let ext = [e, e, e];
    PhantomCase {
        case_id,
        geometry,
        flair: Tensor::new(&ext, f).expect("cube"),
        t1ce: Tensor::new(&ext, c).expect("cube"),
        t2: Tensor::new(&ext, t).expect("cube"),
        seg,
    }
}

/// `n` phantoms from a validated spec. Every case covers at least 1% tumor.
pub fn generate_phantoms(spec: &PhantomSpec, n: usize) -> Result<Vec<PhantomCase>> {
    spec.validate()?;
    (0..n)
        .map(|i| {
            let case = rasterize(spec, case_id(i), i, draw_geometry(spec, i));
            let f = case.tumor_fraction();
            if f < MIN_MASK_FRACTION {
                return Err(Error::SpecInfeasible(format!("{} has tumor fraction {f:.4}", case.case_id)));
            }
            Ok(case)
        })
        .collect()
}
