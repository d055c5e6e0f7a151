//! Derive the reasoning-token mask from a flat transcript: everything
//! inside `<tool_response>…</tool_response>` is environment-injected and
//! must not carry gradient.
//!
//! Run with: `cargo run --example token_masking`

use agsql::grpo::{mask_tokens, tool_response_spans};

fn main() {
    let transcript = "\
Let me check which column holds the funding type.
<tool_call>
{\"name\": \"run_sql_remote\", \"arguments\": {\"query\": \"```sql\\nSELECT s.Phone FROM schools s WHERE s.`Charter Funding Type` = 'Directly funded'\\n```\", \"db_id\": \"california_schools\"}}
</tool_call>
<tool_response>
error:no such column: s.Charter Funding Type
</tool_response>
The column lives in frpm, not schools. Correcting the join:
```sql
SELECT s.Phone FROM schools s JOIN frpm f ON s.CDSCode = f.CDSCode WHERE f.`Charter Funding Type` = 'Directly funded'
```";

    let spans = tool_response_spans(transcript).expect("balanced delimiters");
    let mask = mask_tokens(transcript).expect("balanced delimiters");

    let masked = mask.iter().filter(|&&m| m == 0).count();
    println!(
        "{} chars, {} masked (environment), {} trainable (reasoning)",
        mask.len(),
        masked,
        mask.len() - masked
    );
    for span in &spans {
        println!("masked span: {:?}", &transcript[span.clone()]);
    }
}
