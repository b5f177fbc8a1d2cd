//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. An optional argument selects criteria by substring.

mod arma;
mod determinism;
mod end_to_end;
mod gradients;
mod losses;
mod normalization;
mod overfit;
mod reference;

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    /// Extra lines printed under the verdict.
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }
}

type Criterion = (&'static str, f64, fn() -> Outcome);

fn main() -> ExitCode {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    // (name, runtime budget in seconds, check)
    let criteria: &[Criterion] = &[
        ("reference", f64::INFINITY, reference::run),
        ("normalization", f64::INFINITY, normalization::run),
        ("gradients", 120.0, gradients::run),
        ("losses", f64::INFINITY, losses::run),
        ("overfit", 600.0, overfit::run),
        ("arma", 60.0, arma::run),
        ("end_to_end", 2700.0, end_to_end::run),
        ("determinism", f64::INFINITY, determinism::run),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, budget, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut out = check();
        let secs = start.elapsed().as_secs_f64();
        if secs > *budget {
            out.pass = false;
            out.notes.push(format!("runtime {secs:.1}s exceeds budget {budget}s"));
        }
        println!(
            "{} {name}: {} ({secs:.1}s)",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        for n in &out.notes {
            println!("     {n}");
        }
        if !out.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
