//! Floor-plan images to top-view bitmaps.

use std::path::Path;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Read an `r × r` plan. A pixel is filled when it is darker than 50% gray
/// and at least half opaque; PBM black is filled. The top image row is the
/// `y = r - 1` edge, so the picture reads as a north-up top view. Output is
/// indexed `x + r * y`.
pub fn read_plan(path: &Path, r: usize) -> Result<Vec<bool>, BoxError> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (r, r) {
        return Err(format!("{}: plan is {w}x{h}, expected {r}x{r}", path.display()).into());
    }
    let px = img.to_luma_alpha8();
    let mut plan = vec![false; r * r];
    for row in 0..r {
        for x in 0..r {
            let [l, a] = px.get_pixel(x as u32, row as u32).0;
            plan[x + r * (r - 1 - row)] = l < 128 && a >= 128;
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pbm_and_png_agree() {
        let dir = tempfile::tempdir().unwrap();
        // Filled cell in the top-left pixel: x = 0, y = 3.
        let pbm = dir.path().join("p.pbm");
        std::fs::write(&pbm, "P1\n4 4\n1 0 0 0\n0 0 0 0\n0 0 0 0\n0 0 0 1\n").unwrap();
        let plan = read_plan(&pbm, 4).unwrap();
        let filled: Vec<usize> = (0..16).filter(|&i| plan[i]).collect();
        assert_eq!(filled, vec![3, 12]);

        let png = dir.path().join("p.png");
        let mut img = image::GrayImage::from_pixel(4, 4, image::Luma([255]));
        img.put_pixel(0, 0, image::Luma([0]));
        img.put_pixel(3, 3, image::Luma([127]));
        img.put_pixel(1, 1, image::Luma([128]));
        img.save(&png).unwrap();
        assert_eq!(read_plan(&png, 4).unwrap(), plan);
        assert!(read_plan(&png, 8).is_err());
    }
}
