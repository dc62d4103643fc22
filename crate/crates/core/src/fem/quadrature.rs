/// Symmetric quadrature rule on a triangle in barycentric coordinates.
///
/// Weights sum to one; multiply by the triangle area to integrate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn orbit3(a: f64, b: f64) -> [[f64; 3]; 3] {
    [[a, b, b], [b, a, b], [b, b, a]]
}

impl QuadratureRule {
    /// Lowest-order available rule exact for polynomials up to `degree` (max 5).
    pub fn of_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => QuadratureRule {
                degree: 1,
                points: vec![[1.0 / 3.0; 3]],
                weights: vec![1.0],
            },
            2 => QuadratureRule {
                degree: 2,
                points: orbit3(2.0 / 3.0, 1.0 / 6.0).to_vec(),
                weights: vec![1.0 / 3.0; 3],
            },
            3 | 4 => {
                // Dunavant, 6 points
                let mut points = orbit3(0.108_103_018_168_070, 0.445_948_490_915_965).to_vec();
                points.extend(orbit3(0.816_847_572_980_459, 0.091_576_213_509_771));
                let mut weights = vec![0.223_381_589_678_011; 3];
                weights.extend([0.109_951_743_655_322; 3]);
                QuadratureRule {
                    degree: 4,
                    points,
                    weights,
                }
            }
            _ => {
                // Dunavant, 7 points
                let mut points = vec![[1.0 / 3.0; 3]];
                points.extend(orbit3(0.059_715_871_789_770, 0.470_142_064_105_115));
                points.extend(orbit3(0.797_426_985_353_087, 0.101_286_507_323_456));
                let mut weights = vec![0.225];
                weights.extend([0.132_394_152_788_506; 3]);
                weights.extend([0.125_939_180_544_827; 3]);
                QuadratureRule {
                    degree: 5,
                    points,
                    weights,
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([f64; 3], f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule::of_degree(4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Integral of x^a y^b over the reference triangle (0,0),(1,0),(0,1).
    fn exact_monomial(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn monomials_integrated_exactly() {
        for deg in [1, 2, 4, 5] {
            let rule = QuadratureRule::of_degree(deg);
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for a in 0..=deg as u32 {
                for b in 0..=(deg as u32 - a) {
                    // reference area 1/2; barycentric (l0, l1, l2) -> x = l1, y = l2
                    let q: f64 = rule
                        .iter()
                        .map(|(l, w)| 0.5 * w * l[1].powi(a as i32) * l[2].powi(b as i32))
                        .sum();
                    let e = exact_monomial(a, b);
                    assert!((q - e).abs() < 1e-13, "deg {deg}: x^{a} y^{b}: {q} vs {e}");
                }
            }
        }
    }

    #[test]
    fn degree_four_not_exact_for_degree_six() {
        let rule = QuadratureRule::of_degree(4);
        let q: f64 = rule.iter().map(|(l, w)| 0.5 * w * l[1].powi(6)).sum();
        assert!((q - exact_monomial(6, 0)).abs() > 1e-8);
    }
}
