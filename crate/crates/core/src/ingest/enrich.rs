use serde::Deserialize;
use serde_json::json;

use super::{Chunk, IngestError};
use crate::gateway::{ChatMessage, ChatRequest, InlineImage, Provider, Purpose, ToolSchema};

const SUMMARY_PROMPT: &str = include_str!("../../prompts/summary.txt");
const IMAGE_PROMPT: &str = include_str!("../../prompts/image_description.txt");

pub const IMAGE_TOOL: &str = "record_image_description";

/// Asks the provider for a succinct summary of `chunk`.
pub async fn summarize_chunk(chunk: &Chunk, provider: &dyn Provider) -> Result<String, IngestError> {
    if chunk.text.trim().is_empty() {
        return Err(IngestError::EmptyChunk(chunk.chunk_id.clone()));
    }
    let req = ChatRequest::new(
        Purpose::Summary,
        vec![ChatMessage::system(SUMMARY_PROMPT), ChatMessage::user(chunk.text.clone())],
    );
    let completion = provider.chat(&req).await.map_err(|source| IngestError::Provider {
        context: format!("summarizing {}", chunk.chunk_id),
        source,
    })?;
    let summary = completion.text.unwrap_or_default().trim().to_string();
    if summary.is_empty() {
        return Err(IngestError::EmptyResponse(format!("summary of {}", chunk.chunk_id)));
    }
    Ok(summary)
}

#[derive(Deserialize)]
struct ImageDescription {
    caption: String,
    description: String,
}

fn image_tool() -> ToolSchema {
    ToolSchema {
        name: IMAGE_TOOL.into(),
        description: "Record a caption and a detailed description of the figure.".into(),
        parameters: json!({
            "type": "object",
            "properties": {
                "caption": { "type": "string", "description": "One-line caption naming what the figure shows." },
                "description": { "type": "string", "description": "Detailed description of every labelled part and process shown." }
            },
            "required": ["caption", "description"]
        }),
    }
}

/// Checks the bytes decode as an image and returns their MIME type.
pub fn sniff_image(bytes: &[u8]) -> Result<&'static str, IngestError> {
    if bytes.is_empty() {
        return Err(IngestError::Image("zero-byte image".into()));
    }
    let format = image::guess_format(bytes).map_err(|e| IngestError::Image(e.to_string()))?;
    image::load_from_memory_with_format(bytes, format).map_err(|e| IngestError::Image(e.to_string()))?;
    Ok(format.to_mime_type())
}

/// Generates `(caption, description)` for one extracted figure.
pub async fn describe_image(bytes: &[u8], provider: &dyn Provider) -> Result<(String, String), IngestError> {
    let mime = sniff_image(bytes)?;
    let req = ChatRequest::new(
        Purpose::ImageDescription,
        vec![
            ChatMessage::system(IMAGE_PROMPT),
            ChatMessage::user("Describe this figure.").with_images(vec![InlineImage {
                mime: mime.into(),
                bytes: bytes.to_vec(),
            }]),
        ],
    )
    .with_tools(vec![image_tool()], true);
    let completion = provider.chat(&req).await.map_err(|source| IngestError::Provider {
        context: "describing image".into(),
        source,
    })?;
    let call = completion
        .tool_calls
        .iter()
        .find(|c| c.name == IMAGE_TOOL)
        .ok_or_else(|| IngestError::EmptyResponse("image description tool call".into()))?;
    let parsed: ImageDescription = serde_json::from_str(&call.arguments)
        .map_err(|e| IngestError::EmptyResponse(format!("image description arguments: {e}")))?;
    let (caption, description) = (parsed.caption.trim().to_string(), parsed.description.trim().to_string());
    if caption.is_empty() || description.is_empty() {
        return Err(IngestError::EmptyResponse("caption or description".into()));
    }
    Ok((caption, description))
}
