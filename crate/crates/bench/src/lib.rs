//! Shared fixtures for the pipeline benchmarks.

/// A score of `measures` bars, two voices, chords and modifiers included.
pub fn sample_score(measures: usize) -> String {
    let mut out = String::from("**kern\t**kern\n*clefF4\t*clefG2\n*M4/4\t*M4/4\n");
    for m in 1..=measures {
        out.push_str(&format!("={m}\t={m}\n"));
        out.push_str("2C 2E 2G\t8ccL\n.\t8dd\n.\t8ee\n.\t8ffJ\n2D\t4gg'\n.\t4aa\\\n");
    }
    out.push_str("==\t==\n*-\t*-\n");
    out
}

/// The same score with scrambled token components and unsorted chords,
/// exercising every normalizer pass that the clean text skips.
pub fn scruffy_score(measures: usize) -> String {
    let mut out = String::from("**kern\t**kern\n*clefF4\t*clefG2\n*met(c)\t*\n*M4/4\t*M4/4\n");
    for m in 1..=measures {
        out.push_str(&format!("={m}\t={m}\n"));
        out.push_str("2G 2C 2E\tL8cc\n.\t8dd\n.\t8ee\n.\tJ8ff\n2D\t'4gg\n.\t\\4aa\n");
    }
    out.push_str("==\t==\n*-\t*-\n");
    out
}
