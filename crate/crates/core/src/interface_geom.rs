//! Curved-interface discretization and the macro-to-micro frame rotation.

use serde::{Deserialize, Serialize};

use crate::ruc_micro::Model;
use crate::tensor_mech::{cross, norm3, scale3, sub3, Tensor3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("tangent seed is parallel to the normal")]
    DegenerateFrame,
    #[error("vector is not unit length ({0})")]
    NotUnit(f64),
    #[error("degenerate interface curve")]
    DegenerateCurve,
    #[error("interface needs at least one element")]
    NoElements,
}

/// Global macroscale 1-axis, the default tangent seed.
pub const GLOBAL_X1: Vec3 = [1.0, 0.0, 0.0];

fn normalize(v: &Vec3) -> Vec3 {
    scale3(v, 1.0 / norm3(v))
}

/// Rotation with rows `(Y1*, N × Y1*, N)`, where `Y1*` is `X1` with its
/// component along `N` projected out.
pub fn rotation_from_normal(normal: &Vec3, x1: &Vec3) -> Result<Tensor3, GeomError> {
    for v in [normal, x1] {
        let n = norm3(v);
        if (n - 1.0).abs() > 1e-9 {
            return Err(GeomError::NotUnit(n));
        }
    }
    let dot = Tensor3::dot(x1, normal);
    if dot.abs() >= 1.0 - 1e-9 {
        return Err(GeomError::DegenerateFrame);
    }
    let nn = norm3(normal);
    let y1 = normalize(&sub3(x1, &scale3(normal, dot / nn)));
    let y2 = cross(normal, &y1);
    Ok(Tensor3::from_rows([y1, y2, *normal]))
}

/// One cohesive element of the interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohesiveElement {
    pub id: usize,
    /// Reference centroid (mm).
    pub centroid: Vec3,
    pub normal: Vec3,
    pub tangent_seed: Vec3,
    /// Unit curve tangent at the centroid.
    pub tangent: Vec3,
    /// Area per unit depth (mm²).
    pub area: f64,
    /// Normalized arc-length position in `[0, 1]`.
    pub arc_position: f64,
    pub rotation: Tensor3,
    /// Current displacement jump (µm, global frame).
    pub jump: Vec3,
    pub model: Model,
    pub ruc_id: usize,
}

impl CohesiveElement {
    /// Global vector into the cell frame.
    pub fn to_local(&self, v: &Vec3) -> Vec3 {
        self.rotation.mul_vec(v)
    }

    /// Cell-frame vector back to global.
    pub fn to_global(&self, v: &Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(v)
    }
}

/// Cubic Bézier interface in the `X1`-`X2` plane, unit depth along `X3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterfaceMesh {
    pub control_points: [Vec3; 4],
    /// Layer thickness (µm).
    pub l_c: f64,
    pub flip_normal: bool,
    pub arc_length: f64,
    pub elements: Vec<CohesiveElement>,
}

fn bezier(p: &[Vec3; 4], t: f64) -> Vec3 {
    let s = 1.0 - t;
    let w = [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t];
    let mut out = [0.0; 3];
    for (pi, wi) in p.iter().zip(w) {
        for d in 0..3 {
            out[d] += wi * pi[d];
        }
    }
    out
}

fn bezier_derivative(p: &[Vec3; 4], t: f64) -> Vec3 {
    let s = 1.0 - t;
    let w = [3.0 * s * s, 6.0 * s * t, 3.0 * t * t];
    let mut out = [0.0; 3];
    for k in 0..3 {
        for d in 0..3 {
            out[d] += w[k] * (p[k + 1][d] - p[k][d]);
        }
    }
    out
}

/// Arc length of `[a, b]` by 8-point Gauss-Legendre.
fn arc_length(p: &[Vec3; 4], a: f64, b: f64) -> f64 {
    const X: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const W: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    X.iter()
        .zip(W)
        .map(|(x, w)| {
            w * (norm3(&bezier_derivative(p, mid - half * x))
                + norm3(&bezier_derivative(p, mid + half * x)))
        })
        .sum::<f64>()
        * half
}

/// In-plane normal: the tangent rotated by +90° about `X3`.
fn plane_normal(tangent: &Vec3, flip: bool) -> Vec3 {
    let n = [-tangent[1], tangent[0], 0.0];
    if flip {
        scale3(&n, -1.0)
    } else {
        n
    }
}

impl InterfaceMesh {
    /// Discretizes the curve into `n_elements` cohesive elements centred on
    /// uniform parameter midpoints.
    ///
    /// Normals point from the `-` adherend to the `+` adherend, taken as the
    /// curve tangent rotated counterclockwise in the `X1`-`X2` plane unless
    /// `flip_normal` is set.
    pub fn bezier_interface(
        control_points: [Vec3; 4],
        n_elements: usize,
        l_c: f64,
        flip_normal: bool,
    ) -> Result<Self, GeomError> {
        if n_elements == 0 {
            return Err(GeomError::NoElements);
        }
        if control_points.iter().any(|p| p[2] != control_points[0][2]) {
            return Err(GeomError::DegenerateCurve);
        }
        let total = arc_length(&control_points, 0.0, 1.0);
        if !(total > 1e-12) {
            return Err(GeomError::DegenerateCurve);
        }
        let mut elements = Vec::with_capacity(n_elements);
        let mut s_acc = 0.0;
        for id in 0..n_elements {
            let t0 = id as f64 / n_elements as f64;
            let t1 = (id + 1) as f64 / n_elements as f64;
            let tm = 0.5 * (t0 + t1);
            let d = bezier_derivative(&control_points, tm);
            if !(norm3(&d) > 1e-12) {
                return Err(GeomError::DegenerateCurve);
            }
            let tangent = normalize(&d);
            let normal = plane_normal(&tangent, flip_normal);
            let seed = if Tensor3::dot(&GLOBAL_X1, &normal).abs() < 1.0 - 1e-6 {
                GLOBAL_X1
            } else {
                tangent
            };
            let rotation = rotation_from_normal(&normal, &seed)?;
            let seg = arc_length(&control_points, t0, t1);
            let half = arc_length(&control_points, t0, tm);
            elements.push(CohesiveElement {
                id,
                centroid: bezier(&control_points, tm),
                normal,
                tangent_seed: seed,
                tangent,
                area: seg,
                arc_position: (s_acc + half) / total,
                rotation,
                jump: [0.0; 3],
                model: Model::Taylor,
                ruc_id: id,
            });
            s_acc += seg;
        }
        Ok(InterfaceMesh {
            control_points,
            l_c,
            flip_normal,
            arc_length: total,
            elements,
        })
    }

    /// Control points of a circular arc of `radius` (mm) spanning
    /// `central_angle`, starting at the origin with tangent along `X1`.
    pub fn circular_arc_controls(radius: f64, central_angle: f64) -> [Vec3; 4] {
        let k = 4.0 / 3.0 * (central_angle / 4.0).tan() * radius;
        let center = [0.0, radius, 0.0];
        let p0 = [0.0, 0.0, 0.0];
        let p3 = [
            radius * central_angle.sin(),
            radius - radius * central_angle.cos(),
            0.0,
        ];
        let t3 = [central_angle.cos(), central_angle.sin(), 0.0];
        let _ = center;
        [
            p0,
            [k, 0.0, 0.0],
            [p3[0] - k * t3[0], p3[1] - k * t3[1], 0.0],
            p3,
        ]
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angle(a: &Vec3, b: &Vec3) -> f64 {
        Tensor3::dot(a, b).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn aligned_frames_give_identity() {
        let r = rotation_from_normal(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, Tensor3::IDENTITY);
    }

    #[test]
    fn normal_along_x2() {
        let r = rotation_from_normal(&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            r,
            Tensor3::from_rows([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        );
        assert!((r.det() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_removes_normal_component() {
        let n = normalize(&[0.2, 0.3, 0.9]);
        let x1 = normalize(&[1.0, 0.5, 0.4]);
        let r = rotation_from_normal(&n, &x1).unwrap();
        assert!(Tensor3::dot(&r.row(0), &n).abs() < 1e-14);
        assert_eq!(r.row(2), n);
    }

    #[test]
    fn parallel_seed_is_degenerate() {
        assert_eq!(
            rotation_from_normal(&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0]),
            Err(GeomError::DegenerateFrame)
        );
    }

    #[test]
    fn straight_line_has_constant_normal() {
        let cp = [
            [0.0, 0.0, 0.0],
            [1.0, 0.5, 0.0],
            [2.0, 1.0, 0.0],
            [3.0, 1.5, 0.0],
        ];
        let mesh = InterfaceMesh::bezier_interface(cp, 7, 100.0, false).unwrap();
        for e in &mesh.elements {
            assert!(norm3(&sub3(&e.normal, &mesh.elements[0].normal)) < 1e-14);
        }
        let total: f64 = mesh.elements.iter().map(|e| e.area).sum();
        assert!((total - (9.0f64 + 2.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_element_at_midpoint() {
        let cp = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
        ];
        let mesh = InterfaceMesh::bezier_interface(cp, 1, 100.0, false).unwrap();
        assert_eq!(mesh.len(), 1);
        assert!((mesh.elements[0].centroid[0] - 1.5).abs() < 1e-14);
        assert!((mesh.elements[0].arc_position - 0.5).abs() < 1e-14);
    }

    #[test]
    fn degenerate_curve_fails() {
        let cp = [[1.0, 1.0, 0.0]; 4];
        assert_eq!(
            InterfaceMesh::bezier_interface(cp, 4, 100.0, false),
            Err(GeomError::DegenerateCurve)
        );
        assert!(InterfaceMesh::bezier_interface(cp, 0, 100.0, false).is_err());
    }

    #[test]
    fn arc_normals_rotate_by_central_angle() {
        // Dense polyline estimate of the end-to-end tangent rotation.
        let theta = std::f64::consts::FRAC_PI_3;
        let cp = InterfaceMesh::circular_arc_controls(10.0, theta);
        let m = 4000;
        let pts: Vec<Vec3> = (0..=m).map(|i| bezier(&cp, i as f64 / m as f64)).collect();
        let first = normalize(&sub3(&pts[1], &pts[0]));
        let last = normalize(&sub3(&pts[m], &pts[m - 1]));
        let polyline_angle = angle(&first, &last);
        assert!((polyline_angle - theta).abs() < 0.02 * theta);

        let n_el = 400;
        let mesh = InterfaceMesh::bezier_interface(cp, n_el, 100.0, false).unwrap();
        let rot = angle(&mesh.elements[0].normal, &mesh.elements[n_el - 1].normal);
        // element midpoints sit half a segment in from each end
        let expected = polyline_angle * (n_el - 1) as f64 / n_el as f64;
        assert!((rot - expected).abs() < 0.02 * theta, "{rot} vs {expected}");
    }

    #[test]
    fn refinement_keeps_normals() {
        let cp = InterfaceMesh::circular_arc_controls(10.0, std::f64::consts::FRAC_PI_3);
        let coarse = InterfaceMesh::bezier_interface(cp, 8, 100.0, false).unwrap();
        let fine = InterfaceMesh::bezier_interface(cp, 16, 100.0, false).unwrap();
        // coarse midpoint k sits on the shared node between fine elements 2k and 2k+1
        for (k, e) in coarse.elements.iter().enumerate() {
            let a = &fine.elements[2 * k].normal;
            let b = &fine.elements[2 * k + 1].normal;
            let avg = normalize(&[a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
            assert!(angle(&e.normal, &avg).to_degrees() < 1.0);
        }
        for w in coarse.elements.windows(2) {
            assert!(angle(&w[0].normal, &w[1].normal).to_degrees() < 10.0);
        }
    }
}
