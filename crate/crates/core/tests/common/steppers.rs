//! Explicit-Euler based steppers on the sphere and a fine RK4 reference.

use geonmpc::hemisphere::ambient_dynamics;
use geonmpc::integrators::{
    local_coordinates_step, standard_projection_step, symmetric_projection_step, OneStepMethod,
    UnitSphere, UpperHemisphereChart,
};

pub const HEADING: f64 = 0.45;

pub fn ambient(_t: f64, y: &[f64]) -> Vec<f64> {
    ambient_dynamics(&[y[0], y[1], y[2]], HEADING).to_vec()
}

pub fn chart_field(_t: f64, c: &[f64]) -> Vec<f64> {
    let s = (1.0 - c[0] * c[0] - c[1] * c[1]).sqrt();
    vec![s * HEADING.cos(), s * HEADING.sin()]
}

pub fn start() -> Vec<f64> {
    vec![-0.5, -0.5, 0.5f64.sqrt()]
}

/// Classical RK4 in the ambient space with a fine step.
pub fn reference(t_end: f64) -> Vec<f64> {
    let steps = 20_000;
    let h = t_end / steps as f64;
    let mut y = start();
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = ambient(t, &y);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        let k2 = ambient(t, &y2);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        let k3 = ambient(t, &y3);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let k4 = ambient(t, &y4);
        for i in 0..3 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

#[derive(Clone, Copy, Debug)]
pub enum Stepper {
    Chart,
    Standard,
    Symmetric,
}

pub fn integrate(stepper: Stepper, h: f64, steps: usize) -> Vec<f64> {
    let chart = UpperHemisphereChart::default();
    let sphere = UnitSphere::default();
    let euler = OneStepMethod::ExplicitEuler;
    let mut y = start();
    for k in 0..steps {
        let t = k as f64 * h;
        y = match stepper {
            Stepper::Chart => local_coordinates_step(&chart, euler, &chart_field, t, &y, h),
            Stepper::Standard => standard_projection_step(&sphere, euler, &ambient, t, &y, h),
            Stepper::Symmetric => symmetric_projection_step(&sphere, euler, &ambient, t, &y, h),
        }
        .unwrap();
    }
    y
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
