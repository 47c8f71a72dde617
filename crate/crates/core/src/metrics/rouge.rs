use super::tokenize::tokenize;

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// ROUGE-L F1 over token sequences. 0 when either side is empty or nothing
/// is shared.
///
/// With `P = lcs/|cand|` and `R = lcs/|ref|`, `2PR/(P+R)` reduces to
/// `2·lcs/(|cand|+|ref|)`; the reduced form is a single rounding step.
pub fn rouge_l_f1<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    2.0 * lcs as f64 / (candidate.len() + reference.len()) as f64
}

pub fn rouge_l_f1_text(candidate: &str, reference: &str) -> f64 {
    rouge_l_f1(&tokenize(candidate), &tokenize(reference))
}
