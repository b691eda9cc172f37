use super::{invalid, SceneError};
use crate::{KdTree, Point3, PointCloud3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Semi-axis values (mm) at the three joints; linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusProfile {
    pub shoulder: f64,
    pub elbow: f64,
    pub wrist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateParams {
    pub seed: u64,
    pub length_forearm: f64,
    pub length_upperarm: f64,
    /// Horizontal semi-axis of the elliptical cross-section.
    pub lateral: RadiusProfile,
    /// Vertical semi-axis of the elliptical cross-section.
    pub vertical: RadiusProfile,
    /// Arm extent beyond the wrist and shoulder joints.
    pub stub: f64,
    /// Depth of the vessel centerline below the skin.
    pub vessel_depth: f64,
    pub vessel_radius: f64,
    /// Peak lateral wander of the vessel around the top ridge.
    pub vessel_wander: f64,
    /// Amplitude of the seeded girth perturbation.
    pub bump_amplitude: f64,
    /// Target surface sample spacing.
    pub sample_spacing: f64,
    pub centerline_spacing: f64,
}

impl Default for TemplateParams {
    fn default() -> Self {
        Self {
            seed: 0,
            length_forearm: 240.0,
            length_upperarm: 280.0,
            lateral: RadiusProfile {
                shoulder: 42.0,
                elbow: 36.0,
                wrist: 27.0,
            },
            vertical: RadiusProfile {
                shoulder: 38.0,
                elbow: 30.0,
                wrist: 19.0,
            },
            stub: 15.0,
            vessel_depth: 4.0,
            vessel_radius: 1.2,
            vessel_wander: 3.0,
            bump_amplitude: 0.8,
            sample_spacing: 1.0,
            centerline_spacing: 1.0,
        }
    }
}

impl TemplateParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        let pos = |v: f64, f: &'static str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(f, format!("must be positive, got {v}")))
            }
        };
        if !(self.length_forearm > 50.0) {
            return Err(invalid("length_forearm", "must exceed 50 mm"));
        }
        if !(self.length_upperarm > 50.0) {
            return Err(invalid("length_upperarm", "must exceed 50 mm"));
        }
        for (p, name) in [(&self.lateral, "lateral"), (&self.vertical, "vertical")] {
            pos(p.shoulder, name)?;
            pos(p.elbow, name)?;
            pos(p.wrist, name)?;
        }
        pos(self.stub, "stub")?;
        pos(self.vessel_depth, "vessel_depth")?;
        pos(self.vessel_radius, "vessel_radius")?;
        pos(self.sample_spacing, "sample_spacing")?;
        pos(self.centerline_spacing, "centerline_spacing")?;
        if !(self.bump_amplitude >= 0.0) || !(self.vessel_wander >= 0.0) {
            return Err(invalid("bump_amplitude", "must be non-negative"));
        }
        if self.vessel_depth <= self.vessel_radius {
            return Err(invalid("vessel_depth", "vessel must lie below the skin"));
        }
        let min_v = self.vertical.wrist.min(self.vertical.elbow).min(self.vertical.shoulder);
        if self.bump_amplitude * 3.0 >= 0.5 * min_v {
            return Err(invalid("bump_amplitude", "too large for the arm girth"));
        }
        Ok(())
    }

    pub fn x_shoulder(&self) -> f64 {
        self.stub
    }
    pub fn x_elbow(&self) -> f64 {
        self.stub + self.length_upperarm
    }
    pub fn x_wrist(&self) -> f64 {
        self.x_elbow() + self.length_forearm
    }
    pub fn x_end(&self) -> f64 {
        self.x_wrist() + self.stub
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joints {
    pub wrist: Point3,
    pub elbow: Point3,
    pub shoulder: Point3,
}

impl Joints {
    pub fn map(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            wrist: f(&self.wrist),
            elbow: f(&self.elbow),
            shoulder: f(&self.shoulder),
        }
    }

    /// Interior angle at the elbow in the table plane (the hinge plane), degrees.
    pub fn elbow_angle(&self) -> f64 {
        let flat = |v: Vector3| Vector3::new(v.x, v.y, 0.0);
        let a = flat(self.wrist - self.elbow);
        let b = flat(self.shoulder - self.elbow);
        (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Forearm,
    UpperArm,
}

/// Atlas arm: skin samples, vessel centerline and joint landmarks.
///
/// The template frame has the arm axis along +x (shoulder near the origin,
/// wrist at larger x), the table at `z = 0` and up along +z. Posing keeps
/// the per-sample axial coordinates so that labels stay tied to anatomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTemplate {
    pub params: TemplateParams,
    pub surface: PointCloud3,
    /// Template-frame axial coordinate of every surface sample.
    pub surface_axial: Vec<f64>,
    /// Ordered wrist → shoulder.
    pub centerline: PointCloud3,
    pub centerline_axial: Vec<f64>,
    pub joints: Joints,
    pub vessel_radius: f64,
    bump_phases: [f64; 6],
}

const BUMP_WAVELENGTHS: [f64; 3] = [37.0, 71.0, 113.0];

impl ArmTemplate {
    fn lerp_profile(&self, p: &RadiusProfile, x: f64) -> f64 {
        let (xs, xe, xw) = (self.params.x_shoulder(), self.params.x_elbow(), self.params.x_wrist());
        if x <= xe {
            let t = ((x - xs) / (xe - xs)).clamp(-0.2, 1.0);
            p.shoulder + t * (p.elbow - p.shoulder)
        } else {
            let t = ((x - xe) / (xw - xe)).clamp(0.0, 1.2);
            p.elbow + t * (p.wrist - p.elbow)
        }
    }

    fn bump(&self, x: f64, offset: usize) -> f64 {
        let amp = self.params.bump_amplitude;
        BUMP_WAVELENGTHS
            .iter()
            .enumerate()
            .map(|(k, l)| (TAU * x / l + self.bump_phases[offset + k]).sin())
            .sum::<f64>()
            * amp
            / 3.0
    }

    /// Horizontal semi-axis at template axial coordinate `x`.
    pub fn lateral_radius(&self, x: f64) -> f64 {
        self.lerp_profile(&self.params.lateral, x) + self.bump(x, 0)
    }

    /// Vertical semi-axis at template axial coordinate `x`.
    pub fn vertical_radius(&self, x: f64) -> f64 {
        self.lerp_profile(&self.params.vertical, x) + self.bump(x, 3)
    }

    /// Forearm semi-axes as a function of arc length from the elbow.
    pub fn forearm_radius_profile(&self, s: f64) -> (f64, f64) {
        let x = self.params.x_elbow() + s;
        (self.lateral_radius(x), self.vertical_radius(x))
    }

    /// Upper-arm semi-axes as a function of arc length from the elbow.
    pub fn upperarm_radius_profile(&self, s: f64) -> (f64, f64) {
        let x = self.params.x_elbow() - s;
        (self.lateral_radius(x), self.vertical_radius(x))
    }

    /// Point on the arm axis (template frame).
    pub fn axis_point(&self, x: f64) -> Point3 {
        Point3::new(x, 0.0, self.vertical_radius(x))
    }

    /// Skin height above the table at lateral offset `y` (template frame).
    pub fn skin_height(&self, x: f64, y: f64) -> f64 {
        let a = self.lateral_radius(x);
        let b = self.vertical_radius(x);
        let u = (y / a).clamp(-1.0, 1.0);
        b + b * (1.0 - u * u).sqrt()
    }

    pub fn segment_of_axial(&self, x: f64) -> Segment {
        if x >= self.params.x_elbow() {
            Segment::Forearm
        } else {
            Segment::UpperArm
        }
    }

    fn vessel_lateral(&self, x: f64) -> f64 {
        self.params.vessel_wander * (TAU * (x - self.params.x_elbow()) / 190.0).sin()
    }

    /// The vessel centerline point at template axial coordinate `x`.
    pub fn vessel_point(&self, x: f64) -> Point3 {
        let y = self.vessel_lateral(x);
        Point3::new(x, y, self.skin_height(x, y) - self.params.vessel_depth)
    }

    /// Checks the containment and landmark invariants.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.surface.is_empty() || self.centerline.is_empty() {
            return Err(invalid("surface", "empty template"));
        }
        let tree = KdTree::from_cloud(&self.surface);
        for (i, c) in self.centerline.points.iter().enumerate() {
            let d = tree.nearest(c).map_err(|e| invalid("surface", e.to_string()))?.distance;
            if d < self.vessel_radius {
                return Err(invalid(
                    "vessel_depth",
                    format!("centerline point {i} is {d:.3} mm from the skin"),
                ));
            }
        }
        Ok(())
    }
}

fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let h = ((a - b) / (a + b)).powi(2);
    PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
}

/// Generates the generalized-cylinder atlas arm. Deterministic in `params.seed`.
pub fn make_template(params: &TemplateParams) -> Result<ArmTemplate, SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut phases = [0.0; 6];
    for p in phases.iter_mut() {
        *p = rng.random_range(0.0..TAU);
    }
    let mut t = ArmTemplate {
        params: params.clone(),
        surface: PointCloud3::default(),
        surface_axial: Vec::new(),
        centerline: PointCloud3::default(),
        centerline_axial: Vec::new(),
        joints: Joints {
            wrist: Point3::origin(),
            elbow: Point3::origin(),
            shoulder: Point3::origin(),
        },
        vessel_radius: params.vessel_radius,
        bump_phases: phases,
    };

    let h = params.sample_spacing;
    let n_rings = (params.x_end() / h).round() as usize + 1;
    let ring_dx = params.x_end() / (n_rings - 1) as f64;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut axial = Vec::new();
    let eps = 1e-3;
    for i in 0..n_rings {
        let x = i as f64 * ring_dx;
        let a = t.lateral_radius(x);
        let b = t.vertical_radius(x);
        let da = (t.lateral_radius(x + eps) - t.lateral_radius(x - eps)) / (2.0 * eps);
        let db = (t.vertical_radius(x + eps) - t.vertical_radius(x - eps)) / (2.0 * eps);
        let n_around = (ellipse_perimeter(a, b) / h).ceil() as usize;
        for j in 0..n_around {
            // Stagger alternate rings by half a step for more uniform coverage.
            let phi = (j as f64 + 0.5 * (i % 2) as f64) / n_around as f64 * TAU;
            let (c, s) = (phi.cos(), phi.sin());
            let y = a * c;
            let zr = b * s;
            // Gradient of y²/a² + (z-b)²/b² along x, y and z.
            let gx = -2.0 * y * y * da / (a * a * a) - 2.0 * zr * db / (b * b) - 2.0 * zr * zr * db / (b * b * b);
            let n = Vector3::new(gx, 2.0 * y / (a * a), 2.0 * zr / (b * b)).normalize();
            points.push(Point3::new(x, y, b + zr));
            normals.push(n);
            axial.push(x);
        }
    }
    t.surface = PointCloud3::with_normals(points, normals).expect("equal lengths");
    t.surface_axial = axial;

    let x_from = params.x_wrist() - 8.0;
    let x_to = params.x_shoulder() + 40.0;
    let n_c = ((x_from - x_to) / params.centerline_spacing).round() as usize + 1;
    let step = (x_from - x_to) / (n_c - 1) as f64;
    t.centerline_axial = (0..n_c).map(|i| x_from - i as f64 * step).collect();
    t.centerline = t.centerline_axial.iter().map(|&x| t.vessel_point(x)).collect();

    t.joints = Joints {
        wrist: t.axis_point(params.x_wrist()),
        elbow: t.axis_point(params.x_elbow()),
        shoulder: t.axis_point(params.x_shoulder()),
    };
    Ok(t)
}
