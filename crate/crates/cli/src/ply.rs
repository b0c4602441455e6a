use std::io::Write;

/// Binary little-endian PLY with `float x, y, z` and `uint image_id` per vertex.
pub fn write_ply(out: &mut impl Write, points: &[([f32; 3], u32)]) -> std::io::Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\ncomment predicted scene coordinates of training keypoints\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uint image_id\nend_header\n",
        points.len()
    )?;
    for (p, id) in points {
        for v in p {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&id.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &[([1.0, -2.0, 0.5], 7)]).unwrap();
        let body = buf.len() - 16;
        let header = std::str::from_utf8(&buf[..body]).unwrap();
        assert!(header.starts_with("ply\nformat binary_little_endian 1.0\n"));
        assert!(header.contains("element vertex 1\n") && header.ends_with("end_header\n"));
        assert_eq!(&buf[body..body + 4], &1.0f32.to_le_bytes());
        assert_eq!(&buf[body + 4..body + 8], &(-2.0f32).to_le_bytes());
        assert_eq!(&buf[body + 12..], &7u32.to_le_bytes());
    }
}
