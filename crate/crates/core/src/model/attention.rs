use crate::numerics::{Graph, NumericError, Tensor, Var};

/// Output of [`gated_attention`]: the augmented pinyin rows and each hop's
/// attention weights (`[pinyin_len, context_len]`, row-stochastic).
pub struct GatedAttention {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Gated attention of pinyin rows over context rows.
///
/// For each query row `q_i`: `α_i = softmax(H_c q_i)`, `β_i = H_cᵀ α_i`,
/// `x_i = q_i ⊙ β_i`. The first hop queries with `H_p`; every later hop queries with
/// the previous hop's output against the same `H_c`. Without context the pinyin rows
/// pass through unchanged.
pub fn gated_attention(
    g: &mut Graph,
    pinyin: Var,
    context: Option<Var>,
    hops: usize,
) -> Result<GatedAttention, NumericError> {
    let Some(context) = context else {
        return Ok(GatedAttention {
            output: pinyin,
            weights: Vec::new(),
        });
    };
    let (pw, cw) = (g.value(pinyin).cols(), g.value(context).cols());
    if pw != cw {
        return Err(NumericError::Shape(format!(
            "gated attention needs equal widths, pinyin {:?} vs context {:?}",
            g.value(pinyin).shape(),
            g.value(context).shape()
        )));
    }
    if hops == 0 {
        return Err(NumericError::Domain("gated attention needs at least one hop".into()));
    }
    let context_t = g.transpose(context);
    let mut query = pinyin;
    let mut weights = Vec::with_capacity(hops);
    for _ in 0..hops {
        let scores = g.matmul(query, context_t)?;
        let alpha = g.softmax(scores);
        let beta = g.matmul(alpha, context)?;
        query = g.mul(query, beta)?;
        weights.push(alpha);
    }
    Ok(GatedAttention {
        output: query,
        weights,
    })
}

/// Plain-tensor convenience wrapper around [`gated_attention`] for inspection.
pub fn gated_attention_values(
    pinyin: &Tensor,
    context: Option<&Tensor>,
    hops: usize,
) -> Result<(Tensor, Vec<Tensor>), NumericError> {
    let mut g = Graph::new();
    let p = g.constant(pinyin.clone());
    let c = context.map(|c| g.constant(c.clone()));
    let ga = gated_attention(&mut g, p, c, hops)?;
    let weights = ga.weights.iter().map(|&w| g.value(w).clone()).collect();
    Ok((g.value(ga.output).clone(), weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_context_row_of_ones_is_identity() {
        let (x, w) = gated_attention_values(
            &Tensor::row(vec![2.0, 3.0]),
            Some(&Tensor::row(vec![1.0, 1.0])),
            1,
        )
        .unwrap();
        assert_eq!(w[0].data(), &[1.0]);
        assert_eq!(x.data(), &[2.0, 3.0]);
    }

    #[test]
    fn two_context_rows_split_evenly() {
        let ctx = Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (x, w) = gated_attention_values(&Tensor::row(vec![1.0, 1.0]), Some(&ctx), 1).unwrap();
        assert_eq!(w[0].data(), &[0.5, 0.5]);
        assert_eq!(x.data(), &[0.5, 0.5]);

        let (x, w) = gated_attention_values(&Tensor::row(vec![1.0, 1.0]), Some(&ctx), 2).unwrap();
        assert_eq!(w[1].data(), &[0.5, 0.5]);
        assert_eq!(x.data(), &[0.25, 0.25]);
    }

    #[test]
    fn empty_context_passes_through() {
        let p = Tensor::matrix(&[vec![1.0, -2.0], vec![0.5, 4.0]]);
        let (x, w) = gated_attention_values(&p, None, 3).unwrap();
        assert_eq!(x, p);
        assert!(w.is_empty());
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let r = gated_attention_values(
            &Tensor::row(vec![1.0, 1.0]),
            Some(&Tensor::row(vec![1.0, 1.0, 1.0])),
            1,
        );
        assert!(matches!(r, Err(NumericError::Shape(_))));
    }

    #[test]
    fn all_ones_context_is_exact_identity() {
        let p = Tensor::matrix(&[vec![0.3, -0.7, 1.9], vec![-2.5, 0.125, 4.0]]);
        let ctx = Tensor::matrix(&[vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]]);
        let (x, _) = gated_attention_values(&p, Some(&ctx), 1).unwrap();
        assert_eq!(x, p);
    }
}
