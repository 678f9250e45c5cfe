//! sRGB <-> CIELAB (D65) with the 8-bit lightness scaling `L * 255 / 100`.

// D65 reference white.
const XN: f64 = 0.950456;
const ZN: f64 = 1.088754;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240479, -1.537150, -0.498535],
    [-0.969256, 1.875992, 0.041556],
    [0.055648, -0.204043, 1.057311],
];

const EPSILON: f64 = 0.008856;
const KAPPA: f64 = 903.3;

/// A CIELAB colour with `l` in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl Lab {
    /// Lightness on the 8-bit `[0, 255]` scale.
    pub fn l_u8(&self) -> u8 {
        (self.l * 255.0 / 100.0).round().clamp(0.0, 255.0) as u8
    }

    pub fn with_l_u8(self, l: u8) -> Lab {
        Lab {
            l: l as f64 * 100.0 / 255.0,
            ..self
        }
    }

    /// Shift lightness by the change between two 8-bit levels, keeping the
    /// sub-level fraction of the original.
    pub fn shifted_l_u8(self, from: u8, to: u8) -> Lab {
        Lab {
            l: (self.l + (to as f64 - from as f64) * 100.0 / 255.0).clamp(0.0, 100.0),
            ..self
        }
    }
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let s = if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round().clamp(0.0, 255.0) as u8
}

fn f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn f_inv(v: f64) -> f64 {
    let cube = v * v * v;
    if cube > EPSILON {
        cube
    } else {
        (116.0 * v - 16.0) / KAPPA
    }
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> Lab {
    let lin = rgb.map(srgb_to_linear);
    let xyz: [f64; 3] = RGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    let (fx, fy, fz) = (f(xyz[0] / XN), f(xyz[1]), f(xyz[2] / ZN));
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

pub fn lab_to_rgb(lab: Lab) -> [u8; 3] {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let y = if lab.l > KAPPA * EPSILON {
        fy * fy * fy
    } else {
        lab.l / KAPPA
    };
    let xyz = [f_inv(fx) * XN, y, f_inv(fz) * ZN];
    XYZ_TO_RGB.map(|row| linear_to_srgb(row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]))
}
