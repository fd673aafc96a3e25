use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// `d x d` maps over channels.
    Channel,
    /// `hw x hw` maps over pixels.
    Spatial,
}

/// Multiply-accumulates spent in the two attention products of one layer.
///
/// Channel mode: per head, `K Q` and `V A` each cost `d^2 hw` with
/// `d = c / heads`, so `2 c^2 hw / heads` in total. Spatial mode: per head,
/// `Q K^T` and `A V` each cost `(hw)^2 d`, so `2 (hw)^2 c / heads`.
pub fn flops_attention(h: usize, w: usize, c: usize, heads: usize, mode: AttentionMode) -> u128 {
    assert!(heads > 0 && c.is_multiple_of(heads), "heads must divide channels");
    let hw = (h * w) as u128;
    let (c, heads) = (c as u128, heads as u128);
    match mode {
        AttentionMode::Channel => 2 * c * c * hw / heads,
        AttentionMode::Spatial => 2 * hw * hw * c / heads,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_count_example() {
        assert_eq!(flops_attention(16, 16, 32, 1, AttentionMode::Channel), 524_288);
    }

    #[test]
    fn scaling_in_pixel_count() {
        let base = flops_attention(8, 8, 16, 2, AttentionMode::Channel);
        assert_eq!(flops_attention(16, 8, 16, 2, AttentionMode::Channel), 2 * base);
        let base = flops_attention(8, 8, 16, 2, AttentionMode::Spatial);
        assert_eq!(flops_attention(16, 8, 16, 2, AttentionMode::Spatial), 4 * base);
    }
}
