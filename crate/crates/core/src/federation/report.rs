use super::RoundMetrics;
use std::io::Write;

pub const METRICS_HEADER: [&str; 11] = [
    "round",
    "client",
    "ce",
    "vgae",
    "node",
    "struct",
    "metric_train",
    "metric_val",
    "metric_test",
    "bytes_up",
    "bytes_down",
];

pub const DIAGNOSTICS_HEADER: [&str; 8] = [
    "round",
    "scope",
    "class",
    "cluster",
    "delta_mu",
    "delta_sigma",
    "eps_u",
    "error_floor",
];

pub const DISTANCES_HEADER: [&str; 4] = ["round", "client_a", "client_b", "chordal"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per client and round. Undefined metrics are left empty.
pub fn write_metrics_csv<W: Write>(rounds: &[RoundMetrics], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rounds {
        for c in &r.clients {
            let l = &c.eval.losses;
            w.write_record([
                r.round.to_string(),
                c.client.to_string(),
                l.ce.to_string(),
                l.vgae.to_string(),
                l.node.to_string(),
                l.structure.to_string(),
                opt(c.eval.train),
                opt(c.eval.val),
                opt(c.eval.test),
                c.bytes_up.to_string(),
                c.bytes_down.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per round: one `semantic` row per class cluster, one `structural` row
/// per structural cluster, the worst-case `clustered` row with the error
/// floor, and the `unclustered` row comparing all clients at once.
pub fn write_diagnostics_csv<W: Write>(rounds: &[RoundMetrics], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DIAGNOSTICS_HEADER)?;
    let e = String::new;
    for r in rounds {
        let Some(d) = &r.diagnostics else { continue };
        let round = r.round.to_string();
        for s in &d.heterogeneity.semantic {
            w.write_record([
                round.clone(),
                "semantic".into(),
                s.class.to_string(),
                s.cluster.to_string(),
                s.delta_mu.to_string(),
                s.delta_sigma.to_string(),
                e(),
                e(),
            ])?;
        }
        for s in &d.heterogeneity.structural {
            w.write_record([
                round.clone(),
                "structural".into(),
                e(),
                s.cluster.to_string(),
                e(),
                e(),
                s.eps_u.to_string(),
                e(),
            ])?;
        }
        let h = &d.heterogeneity;
        w.write_record([
            round.clone(),
            "clustered".into(),
            e(),
            e(),
            h.delta_mu.to_string(),
            h.delta_sigma.to_string(),
            h.eps_u.to_string(),
            d.floor.value.to_string(),
        ])?;
        let u = &d.unclustered;
        w.write_record([
            round,
            "unclustered".into(),
            e(),
            e(),
            u.delta_mu.to_string(),
            u.delta_sigma.to_string(),
            u.eps_u.to_string(),
            e(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The full client-by-client chordal distance matrix of every round.
pub fn write_distances_csv<W: Write>(rounds: &[RoundMetrics], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DISTANCES_HEADER)?;
    for r in rounds {
        let Some(d) = &r.diagnostics else { continue };
        for (a, row) in d.chordal.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                w.write_record([r.round.to_string(), a.to_string(), b.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
