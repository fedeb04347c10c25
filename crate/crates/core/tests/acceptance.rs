//! Acceptance criteria at their stated tolerances, one PASS/FAIL line each.

use std::io::Write;
use std::time::Instant;

use splab::report::Report;
use splab::sweeps::{run_sweep, SweepConfig};
use splab::verify::{run_all, run_suite, Suite};

/// Criteria that fail at the stated tolerance; see the README.
const KNOWN_FAILURES: &[usize] = &[8];

const QUICK_BUDGET_S: f64 = 900.0;
const SWEEP_BUDGET_S: f64 = 7200.0;

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn say(line: &str) {
    // bypasses the test harness capture so the table always shows
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn from_report(id: usize, title: &'static str, report: &Report, seconds: f64) -> Outcome {
    for row in &report.rows {
        say(&format!("    {row}"));
    }
    let mut failed: Vec<String> = report.failures().map(|r| r.property.clone()).collect();
    let detail = if failed.is_empty() {
        format!("{} checks in {seconds:.1} s", report.rows.len())
    } else {
        failed.dedup();
        format!("{} of {} checks failed ({}) in {seconds:.1} s", report.failures().count(), report.rows.len(), failed.join("; "))
    };
    Outcome { id, title, pass: report.pass(), detail }
}

fn suite(id: usize, title: &'static str, s: Suite) -> Outcome {
    match run_suite(s, false) {
        Ok(o) => from_report(id, title, &o.report, o.seconds),
        Err(e) => Outcome { id, title, pass: false, detail: format!("suite {s} did not run: {e}") },
    }
}

fn budgets() -> Outcome {
    let t = Instant::now();
    let quick = run_all(true);
    let quick_s = t.elapsed().as_secs_f64();
    let quick_ok = match &quick {
        Ok(outcomes) => {
            for o in outcomes {
                say(&format!("    quick {}: {} checks, {} failed, {:.1} s", o.suite, o.report.rows.len(), o.report.failures().count(), o.seconds));
            }
            quick_s <= QUICK_BUDGET_S
        }
        Err(e) => {
            say(&format!("    quick suites did not run: {e}"));
            false
        }
    };
    let t = Instant::now();
    let sweep = run_sweep(&SweepConfig::default(), None);
    let sweep_s = t.elapsed().as_secs_f64();
    let sweep_ok = match &sweep {
        Ok(out) => {
            say(&format!("    default sweep: {} records, {} failed, {:.1} s", out.records.len(), out.failures(), sweep_s));
            sweep_s <= SWEEP_BUDGET_S
        }
        Err(e) => {
            say(&format!("    default sweep did not run: {e}"));
            false
        }
    };
    Outcome {
        id: 9,
        title: "desk-scale budgets",
        pass: quick_ok && sweep_ok,
        detail: format!(
            "verify all --quick {quick_s:.0} s (budget {QUICK_BUDGET_S:.0}), default sweep {sweep_s:.0} s (budget {SWEEP_BUDGET_S:.0}), {} cores",
            rayon::current_num_threads()
        ),
    }
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();
    let plan: [(usize, &'static str, Suite); 8] = [
        (1, "elliptic oracles", Suite::Elliptic),
        (2, "Green's function audits", Suite::Greens),
        (3, "variational solver", Suite::Solver),
        (4, "expanding-domain phenomenology", Suite::Expanding),
        (5, "scaling identities", Suite::Scalings),
        (6, "barycenter machinery", Suite::Topology),
        (7, "annulus gap", Suite::Annulus),
        (8, "small-domain positivity and divergence", Suite::Appendix),
    ];
    for (id, title, s) in plan {
        say(&format!("criterion {id}: {title}"));
        outcomes.push(suite(id, title, s));
    }
    say("criterion 9: desk-scale budgets");
    outcomes.push(budgets());

    say("");
    for o in &outcomes {
        let known = if !o.pass && KNOWN_FAILURES.contains(&o.id) { " (known)" } else { "" };
        say(&format!("{} criterion {}: {}{known}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.title, o.detail));
    }
    let unexpected: Vec<usize> = outcomes.iter().filter(|o| !o.pass && !KNOWN_FAILURES.contains(&o.id)).map(|o| o.id).collect();
    assert!(unexpected.is_empty(), "criteria {unexpected:?} failed");
}
