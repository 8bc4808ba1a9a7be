use std::io::Write;

pub const ATTENTION_HEADER: [&str; 5] = ["layer", "head", "query", "key", "weight"];

/// Writes attention weights as `layer,head,query,key,weight` rows.
///
/// `weights` is `heads × n × n`, row-major per head; `labels` names the
/// `n` positions (days or substations).
pub fn write_attention_csv<W: Write>(
    out: &mut csv::Writer<W>,
    layer: &str,
    weights: &[f64],
    heads: usize,
    labels: &[String],
) -> Result<(), csv::Error> {
    let n = labels.len();
    assert_eq!(weights.len(), heads * n * n, "attention weights do not match labels");
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                out.write_record([layer, &h.to_string(), &labels[i], &labels[j], &weights[(h * n + i) * n + j].to_string()])?;
            }
        }
    }
    Ok(())
}
