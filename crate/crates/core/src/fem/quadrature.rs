//! Quadrature rules. The 6-point triangle rule is exact to degree 4, which
//! covers all P2 x P2 mass terms; boundary integrals use 3-point Gauss.

/// 6-point degree-4 rule in barycentric coordinates; weights sum to 1, so
/// integrals are `area * sum(w_q f(x_q))`.
pub const TRI6: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.445948490915965;
    const W1: f64 = 0.223381589678011;
    const A2: f64 = 0.091576213509771;
    const W2: f64 = 0.109951743655322;
    [
        ([1.0 - 2.0 * A1, A1, A1], W1),
        ([A1, 1.0 - 2.0 * A1, A1], W1),
        ([A1, A1, 1.0 - 2.0 * A1], W1),
        ([1.0 - 2.0 * A2, A2, A2], W2),
        ([A2, 1.0 - 2.0 * A2, A2], W2),
        ([A2, A2, 1.0 - 2.0 * A2], W2),
    ]
};

/// 3-point Gauss on [0,1]; exact to degree 5, enough for P2 traces.
pub const GAUSS3: [(f64, f64); 3] = {
    const S: f64 = 0.3872983346207417; // sqrt(3/5)/2
    [
        (0.5 - S, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 + S, 5.0 / 18.0),
    ]
};

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tri6_weights_sum_to_one() {
        let s: f64 = TRI6.iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn tri6_integrates_quartic_exactly() {
        // int over reference triangle of l1^2 l2^2 = 2! 2! 0! / (2+2+0+2)! * 2 * area
        // = 4/720 * 1 = 1/180 with area 1/2 folded in.
        let area = 0.5;
        let val: f64 = TRI6
            .iter()
            .map(|(l, w)| w * l[0] * l[0] * l[1] * l[1])
            .sum::<f64>()
            * area;
        assert_abs_diff_eq!(val, 1.0 / 180.0, epsilon = 1e-15);
    }

    #[test]
    fn gauss3_integrates_quintic_exactly() {
        let val: f64 = GAUSS3.iter().map(|(t, w)| w * t.powi(5)).sum();
        assert_abs_diff_eq!(val, 1.0 / 6.0, epsilon = 1e-15);
    }
}
