use std::fmt::Write;

/// Smallest side whose square holds `len` pixels.
pub fn square_side(len: usize) -> usize {
    let mut side = (len as f64).sqrt() as usize;
    while side * side < len {
        side += 1;
    }
    while side > 0 && (side - 1) * (side - 1) >= len {
        side -= 1;
    }
    side
}

/// Plain (P2) grayscale image of a flat vector, filled row-major into the
/// smallest square and min-max scaled to 0..=255. Unused trailing pixels are
/// 0; a constant vector renders black.
pub fn render_pgm(values: &[f64]) -> String {
    let side = square_side(values.len());
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let level = |v: f64| -> u8 {
        if span > 0.0 && span.is_finite() {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    };
    let mut out = format!("P2\n{side} {side}\n255\n");
    for row in 0..side {
        let line: Vec<String> = (0..side)
            .map(|col| {
                values
                    .get(row * side + col)
                    .map_or(0, |&v| level(v))
                    .to_string()
            })
            .collect();
        writeln!(out, "{}", line.join(" ")).expect("write to string");
    }
    out
}
