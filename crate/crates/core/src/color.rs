//! sRGB to CIELAB conversion (D65 white point), used by the superpixel
//! clustering distance.

const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn srgb_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts an sRGB triple in `[0, 1]` to `(L*, a*, b*)`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let r = srgb_linear(rgb[0]);
    let g = srgb_linear(rgb[1]);
    let b = srgb_linear(rgb[2]);

    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;

    let fx = lab_f(x / WHITE[0]);
    let fy = lab_f(y / WHITE[1]);
    let fz = lab_f(z / WHITE[2]);

    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn reference_colors() {
        let black = srgb_to_lab([0.0, 0.0, 0.0]);
        assert!(black.iter().all(|&v| close(v, 0.0, 1e-9)));

        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!(close(white[0], 100.0, 1e-2));
        assert!(close(white[1], 0.0, 1e-2));
        assert!(close(white[2], 0.0, 1e-2));

        // Standard tabulated value for pure sRGB red.
        let red = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!(close(red[0], 53.24, 0.05));
        assert!(close(red[1], 80.09, 0.1));
        assert!(close(red[2], 67.20, 0.1));
    }

    #[test]
    fn lightness_is_monotone_in_gray_level() {
        let mut prev = -1.0;
        for i in 0..=20 {
            let g = f64::from(i) / 20.0;
            let lab = srgb_to_lab([g, g, g]);
            assert!(lab[0] > prev);
            prev = lab[0];
        }
    }
}
