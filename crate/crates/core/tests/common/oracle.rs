//! Reference reward formulas written straight from their definitions, sharing
//! no code with the engine. Points are `(x, y)` pixels, screens `(W, H)`.

pub const TAU_NORM: f64 = 0.1;
pub const TAU_ABS_1: f64 = 40.0;
pub const TAU_ABS_2: f64 = 200.0;
pub const GAMMA: f64 = 0.2;

pub fn d_abs(p1: (u32, u32), p2: (u32, u32)) -> f64 {
    let (x1, y1) = (p1.0 as f64, p1.1 as f64);
    let (x2, y2) = (p2.0 as f64, p2.1 as f64);
    ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt()
}

/// Each point is scaled into the unit square before the distance is taken.
pub fn d_norm(p1: (u32, u32), p2: (u32, u32), screen: (u32, u32)) -> f64 {
    let (w, h) = (screen.0 as f64, screen.1 as f64);
    let (x1, y1) = (p1.0 as f64 / w, p1.1 as f64 / h);
    let (x2, y2) = (p2.0 as f64 / w, p2.1 as f64 / h);
    ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt()
}

pub fn f_abs(p1: (u32, u32), p2: (u32, u32), tau: f64) -> f64 {
    let d = d_abs(p1, p2);
    if d < tau {
        1.0 - d / tau
    } else {
        0.0
    }
}

pub fn r_coord(pred: (u32, u32), gold: (u32, u32), screen: (u32, u32), tau_norm: f64, tau1: f64, tau2: f64) -> f64 {
    if d_norm(pred, gold, screen) <= tau_norm {
        1.0 + f_abs(pred, gold, tau1)
    } else {
        f_abs(pred, gold, tau2)
    }
}

pub fn r_coord_default(pred: (u32, u32), gold: (u32, u32), screen: (u32, u32)) -> f64 {
    r_coord(pred, gold, screen, TAU_NORM, TAU_ABS_1, TAU_ABS_2)
}

pub fn r_total(format: u8, action: f64, memory: u8, gamma: f64) -> f64 {
    format as f64 * (action + gamma * memory as f64)
}
